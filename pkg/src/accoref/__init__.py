"""Actor-critic coreference resolution toolkit.

Subpackages cover the dense autodiff core (`autodiff`, `layers`), corpus
handling (`corpus`, `embeddings`), span representation (`spans`), the
mention-pair decision process (`env`, `episodes`), training (`training`),
inference (`decoding`) and scoring (`metrics`).
"""

__version__ = "0.1.0"
