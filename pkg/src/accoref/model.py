"""Full model bundle: span encoder, pair scorer, policy and value networks.

The policy and value networks read a decision's state vector
[m_i ; m_j ; pair features] with an LSTM body: the cell consumes the
antecedent side [m_j ; features] and then the current side
[m_i ; features], from a zero initial state, and a linear head maps the
final hidden state to the outputs. The gating of the second step against
the first step's hidden state gives the pair interaction directly. Action
probabilities are a pure function of the state vector, which lets training
recompute them in one batched pass over an episode.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .checkpoint import CheckpointError, load_arrays, save_arrays
from .env import RewardScorer
from .layers import LSTMCell, Linear
from .spans import FeatureEmbedder, SpanEncoder

__all__ = ["ModelConfig", "ActionNet", "CorefModel"]

N_ACTIONS = 3


@dataclass
class ModelConfig:
    d_tok: int
    feat_dim: int = 20
    ff_hidden: int = 150
    lstm_hidden: int = 200
    max_span_width: int = 10
    dropout: float = 0.5
    gamma_decay: float = 0.5
    init_seed: int = 0

    @property
    def span_dim(self) -> int:
        return 3 * self.d_tok + self.feat_dim

    @property
    def state_dim(self) -> int:
        return 2 * self.span_dim + 3 * self.feat_dim


class ActionNet:
    """LSTM body over (antecedent side, mention side) plus a linear head."""

    def __init__(self, span_dim: int, feat_dim: int, hidden: int, n_out: int,
                 rng, name: str, zero_head: bool = False):
        self.span_dim = span_dim
        self.pair_dim = 3 * feat_dim
        self.cell = LSTMCell(span_dim + self.pair_dim, hidden, rng, f"{name}.cell")
        self.head = Linear(hidden, n_out, rng, f"{name}.head")
        if zero_head:
            # A zero readout makes the initial estimates exactly zero, so
            # early advantages reduce to the raw rewards instead of noise.
            self.head.w.data[...] = 0.0

    def _chunks(self, states: Tensor) -> tuple[Tensor, Tensor]:
        d, f = self.span_dim, self.pair_dim
        data = states.data
        mention = ad.const(np.concatenate([data[:, :d], data[:, 2 * d :]], axis=1))
        antecedent = ad.const(data[:, d : 2 * d + f])
        return antecedent, mention

    def __call__(self, states: Tensor) -> Tensor:
        first, second = self._chunks(states)
        h0, c0 = self.cell.zero_state(states.shape[0])
        h1, c1 = self.cell(first, h0, c0)
        h2, _ = self.cell(second, h1, c1)
        return self.head(h2)

    def parameters(self) -> list[Parameter]:
        return self.cell.parameters() + self.head.parameters()


class CorefModel:
    def __init__(self, config: ModelConfig):
        self.config = config
        rng = np.random.default_rng(config.init_seed)
        self.encoder = SpanEncoder(config.d_tok, rng)
        self.features = FeatureEmbedder(config.max_span_width, config.feat_dim, rng)
        self.scorer = RewardScorer(
            config.span_dim,
            self.features,
            rng,
            hidden=config.ff_hidden,
            dropout=config.dropout,
            gamma_decay=config.gamma_decay,
        )
        self.policy = ActionNet(config.span_dim, config.feat_dim, config.lstm_hidden,
                                N_ACTIONS, rng, "policy")
        self.value = ActionNet(config.span_dim, config.feat_dim, config.lstm_hidden,
                               1, rng, "value", zero_head=True)
        self.sentinel = Parameter(
            rng.uniform(-0.5, 0.5, size=(1, config.span_dim)), "sentinel"
        )

    def parameters(self) -> list[Parameter]:
        return (
            self.encoder.parameters()
            + self.features.parameters()
            + self.scorer.parameters()
            + self.policy.parameters()
            + self.value.parameters()
            + [self.sentinel]
        )

    def named_arrays(self) -> dict[str, np.ndarray]:
        return {p.name: p.data for p in self.parameters()}

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    # -- persistence --------------------------------------------------------

    def save(self, path, extra: dict | None = None) -> None:
        """Write the checkpoint plus a JSON sidecar with the model config."""
        path = Path(path)
        save_arrays(path, self.named_arrays())
        sidecar = {"model": asdict(self.config)}
        if extra:
            sidecar.update(extra)
        path.with_suffix(path.suffix + ".json").write_text(
            json.dumps(sidecar, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        params = {p.name: p for p in self.parameters()}
        missing = params.keys() - arrays.keys()
        unknown = arrays.keys() - params.keys()
        if missing or unknown:
            raise CheckpointError(
                f"checkpoint mismatch: missing {sorted(missing)}, unknown {sorted(unknown)}"
            )
        for name, param in params.items():
            arr = arrays[name]
            if arr.shape != param.data.shape:
                raise CheckpointError(
                    f"parameter {name}: checkpoint shape {arr.shape} != model {param.data.shape}"
                )
            param.data[...] = arr

    @classmethod
    def load(cls, path) -> tuple["CorefModel", dict]:
        path = Path(path)
        sidecar_path = path.with_suffix(path.suffix + ".json")
        if not sidecar_path.exists():
            raise CheckpointError(f"missing checkpoint sidecar {sidecar_path}")
        sidecar = json.loads(sidecar_path.read_text(encoding="utf-8"))
        model = cls(ModelConfig(**sidecar["model"]))
        model.load_arrays(load_arrays(path))
        return model, sidecar
