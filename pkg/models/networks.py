"""Summarisation networks.

* :class:`VsLstmModel` - bidirectional LSTM plus the importance MLP ``f_I``.
* :class:`DppLstmModel` - adds the similarity MLP ``f_S``; the two heads
  combine into the kernel ``L = (y y^T) * (Phi Phi^T)``.
* :class:`DppLstmSingleModel` - bidirectional LSTM plus ``f_S`` only, with
  ``L = Phi Phi^T``.
* :class:`MlpShotModel` / :class:`MlpFrameModel` - two-hidden-layer MLP
  baselines over shot-averaged features or a centred frame window.

Every model keeps its weights in one flat :data:`ParamSet`; the typed
views (:class:`BiLstmParams`, :class:`DenseLayerParams`) share memory with
it, so optimisers and checkpoints only ever deal with the flat dict.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Any, ClassVar, Dict, List, Optional, Sequence, Type

import numpy as np

from models import autodiff as ad
from models.annotations import ImportanceCurve, Segmentation, validate_features
from models.dpp import DppKernel
from utils import config
from utils.errors import ContractError, InvalidTargetError, ShapeError

logger = logging.getLogger(__name__)

GATES = ("w_i", "w_f", "w_o", "w_c")


class ModelKind(str, Enum):
    VSLSTM = "vslstm"
    DPPLSTM = "dpplstm"
    DPPLSTM_SINGLE = "dpplstm-single"
    MLP_SHOT = "mlp-shot"
    MLP_FRAME = "mlp-frame"


@dataclass
class NetworkConfig:
    """Sizes shared by all models.

    Attributes:
        feature_dim (int): Frame feature dimension ``d``.
        hidden_size (int): Units per LSTM direction.
        mlp_hidden (int): Units per MLP hidden layer.
        embed_dim (int): Output size of ``f_S``.
        window_k (int): Frame window of the MLP-Frame baseline (odd).
        init_scale (float): Half-width of the uniform initialisation.
        jitter (float): Cholesky jitter for the DPP objective.
    """

    feature_dim: int
    hidden_size: int = config.HIDDEN_SIZE
    mlp_hidden: int = config.MLP_HIDDEN
    embed_dim: int = config.EMBED_DIM
    window_k: int = config.FRAME_WINDOW
    init_scale: float = config.INIT_SCALE
    jitter: float = config.JITTER

    def __post_init__(self) -> None:
        if min(self.feature_dim, self.hidden_size, self.mlp_hidden, self.embed_dim) < 1:
            raise ContractError("network sizes must be positive")
        if self.window_k < 1 or self.window_k % 2 == 0:
            raise ContractError("window_k must be a positive odd number")

    def to_dict(self) -> Dict[str, Any]:
        """Field values as a plain dict."""
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "NetworkConfig":
        """Inverse of :meth:`to_dict`.

        Raises:
            TypeError: On unknown keys.
            ContractError: If a size is out of range.
        """
        return cls(**data)


@dataclass
class ModelCheckpoint:
    """All learnable weights of one model plus training metadata."""

    kind: ModelKind
    config: NetworkConfig
    params: ad.ParamSet
    metadata: Dict[str, Any] = field(default_factory=dict)


def window_features(x: np.ndarray, k: int) -> np.ndarray:
    """Concatenate a centred ``k``-frame window around every frame.

    Sequence ends are padded by edge replication.
    """
    x = validate_features(x)
    half = k // 2
    padded = np.pad(x, ((half, half), (0, 0)), mode="edge")
    return np.hstack([padded[j : j + x.shape[0]] for j in range(k)])


@dataclass(eq=False)
class SequenceModel:
    """Base class holding the flat parameter set."""

    config: NetworkConfig
    params: ad.ParamSet

    kind: ClassVar[ModelKind]

    @classmethod
    def initialize(cls, cfg: NetworkConfig, seed: int = 0, scale: Optional[float] = None) -> "SequenceModel":
        """Fresh model with uniform weights drawn from a seeded generator."""
        rng = np.random.default_rng(seed)
        params: ad.ParamSet = {}
        cls._init_params(params, rng, cfg, cfg.init_scale if scale is None else scale)
        return cls(cfg, params)

    @classmethod
    def zeros(cls, cfg: NetworkConfig) -> "SequenceModel":
        """Model with every weight set to 0."""
        return cls.initialize(cfg, scale=0.0)

    @classmethod
    def _init_params(cls, params: ad.ParamSet, rng: np.random.Generator, cfg: NetworkConfig, scale: float) -> None:
        raise NotImplementedError

    # -- shared pieces --------------------------------------------------
    @staticmethod
    def _add_bilstm(params: ad.ParamSet, rng: np.random.Generator, cfg: NetworkConfig, scale: float) -> None:
        """Forward and backward LSTM cells under ``bilstm.*``."""
        for direction in ("fwd", "bwd"):
            cell = ad.init_lstm_cell(rng, cfg.feature_dim, cfg.hidden_size, scale)
            for gate in GATES:
                params[f"bilstm.{direction}.{gate}"] = getattr(cell, gate)

    @staticmethod
    def _add_mlp(
        params: ad.ParamSet,
        rng: np.random.Generator,
        prefix: str,
        sizes: Sequence[int],
        scale: float,
    ) -> None:
        """Dense layers ``prefix.k.weight``/``prefix.k.bias`` for consecutive ``sizes``."""
        for k, (n_in, n_out) in enumerate(zip(sizes, sizes[1:])):
            layer = ad.init_dense(rng, n_in, n_out, scale, ad.Activation.LINEAR)
            params[f"{prefix}.{k}.weight"] = layer.weight
            params[f"{prefix}.{k}.bias"] = layer.bias

    def _layers(self, prefix: str, activations: Sequence[ad.Activation]) -> List[ad.DenseLayerParams]:
        return [
            ad.DenseLayerParams(self.params[f"{prefix}.{k}.weight"], self.params[f"{prefix}.{k}.bias"], act)
            for k, act in enumerate(activations)
        ]

    def _var(self, name: str) -> ad.Var:
        return ad.Var.param(name, self.params[name])

    def _mlp_graph(self, prefix: str, activations: Sequence[ad.Activation], inputs: ad.Var) -> ad.Var:
        """Chain the named dense layers on ``inputs``."""
        out = inputs
        for k, act in enumerate(activations):
            out = ad.dense(out, self._var(f"{prefix}.{k}.weight"), self._var(f"{prefix}.{k}.bias"), act)
        return out

    def _bilstm_graph(self, x: np.ndarray) -> ad.Var:
        """Bi-LSTM states with the raw features appended."""
        x_var = ad.constant(x)
        hidden = ad.bilstm(
            x_var,
            [self._var(f"bilstm.fwd.{g}") for g in GATES],
            [self._var(f"bilstm.bwd.{g}") for g in GATES],
        )
        return ad.concat([hidden, x_var])

    @property
    def bilstm(self) -> ad.BiLstmParams:
        return ad.BiLstmParams(
            ad.LstmCellParams(*(self.params[f"bilstm.fwd.{g}"] for g in GATES)),
            ad.LstmCellParams(*(self.params[f"bilstm.bwd.{g}"] for g in GATES)),
        )

    def check_features(self, x: np.ndarray) -> np.ndarray:
        """Validate ``x`` and its width against the model.

        Raises:
            ShapeError: If the feature dimension differs from the config.
        """
        x = validate_features(x)
        if x.shape[1] != self.config.feature_dim:
            raise ShapeError(f"features of dim {x.shape[1]}, model expects {self.config.feature_dim}")
        return x

    # -- persistence ----------------------------------------------------
    def to_checkpoint(self, metadata: Optional[Dict[str, Any]] = None) -> ModelCheckpoint:
        """Copy the weights and config into a :class:`ModelCheckpoint`."""
        return ModelCheckpoint(
            self.kind,
            NetworkConfig.from_dict(self.config.to_dict()),
            {name: value.copy() for name, value in self.params.items()},
            dict(metadata or {}),
        )

    def load_params(self, params: ad.ParamSet) -> None:
        """Overwrite weights in place, keeping array identities."""
        if set(params) != set(self.params):
            raise ShapeError("parameter names do not match the model")
        for name, value in params.items():
            if value.shape != self.params[name].shape:
                raise ShapeError(f"parameter {name} has shape {value.shape}, expected {self.params[name].shape}")
            self.params[name][...] = value

    def copy(self) -> "SequenceModel":
        """Independent model with copied weights."""
        return type(self)(NetworkConfig.from_dict(self.config.to_dict()), {n: v.copy() for n, v in self.params.items()})


_FI = (ad.Activation.SIGMOID, ad.Activation.SIGMOID)
_FS = (ad.Activation.SIGMOID, ad.Activation.LINEAR)
_BASELINE = (ad.Activation.SIGMOID, ad.Activation.SIGMOID, ad.Activation.SIGMOID)


class VsLstmModel(SequenceModel):
    """Bidirectional LSTM with the importance head ``f_I``."""

    kind = ModelKind.VSLSTM

    @classmethod
    def _init_params(cls, params, rng, cfg, scale):
        cls._add_bilstm(params, rng, cfg, scale)
        head_in = 2 * cfg.hidden_size + cfg.feature_dim
        cls._add_mlp(params, rng, "f_i", (head_in, cfg.mlp_hidden, 1), scale)

    @property
    def f_i(self) -> List[ad.DenseLayerParams]:
        return self._layers("f_i", _FI)

    def graph(self, x: np.ndarray) -> Dict[str, ad.Var]:
        x = self.check_features(x)
        joint = self._bilstm_graph(x)
        quality = ad.reshape(self._mlp_graph("f_i", _FI, joint), (x.shape[0],))
        return {"joint": joint, "quality": quality}


class DppLstmModel(VsLstmModel):
    """vsLSTM plus the similarity head ``f_S`` feeding a DPP kernel."""

    kind = ModelKind.DPPLSTM

    @classmethod
    def _init_params(cls, params, rng, cfg, scale):
        super()._init_params(params, rng, cfg, scale)
        head_in = 2 * cfg.hidden_size + cfg.feature_dim
        cls._add_mlp(params, rng, "f_s", (head_in, cfg.mlp_hidden, cfg.embed_dim), scale)

    @property
    def f_s(self) -> List[ad.DenseLayerParams]:
        return self._layers("f_s", _FS)

    def graph(self, x: np.ndarray) -> Dict[str, ad.Var]:
        nodes = super().graph(x)
        embedding = self._mlp_graph("f_s", _FS, nodes["joint"])
        nodes["embedding"] = embedding
        nodes["kernel"] = ad.quality_diversity_kernel(nodes["quality"], embedding)
        return nodes


class DppLstmSingleModel(SequenceModel):
    """Bidirectional LSTM with only ``f_S``; ``L = Phi Phi^T``."""

    kind = ModelKind.DPPLSTM_SINGLE

    @classmethod
    def _init_params(cls, params, rng, cfg, scale):
        cls._add_bilstm(params, rng, cfg, scale)
        head_in = 2 * cfg.hidden_size + cfg.feature_dim
        cls._add_mlp(params, rng, "f_s", (head_in, cfg.mlp_hidden, cfg.embed_dim), scale)

    @property
    def f_s(self) -> List[ad.DenseLayerParams]:
        return self._layers("f_s", _FS)

    def graph(self, x: np.ndarray) -> Dict[str, ad.Var]:
        x = self.check_features(x)
        joint = self._bilstm_graph(x)
        embedding = self._mlp_graph("f_s", _FS, joint)
        return {"joint": joint, "embedding": embedding, "kernel": ad.gram(embedding)}


class MlpBaseline(SequenceModel):
    """Two-hidden-layer MLP scoring shots or frame windows."""

    variant: ClassVar[str]

    @classmethod
    def input_dim(cls, cfg: NetworkConfig) -> int:
        raise NotImplementedError

    @classmethod
    def _init_params(cls, params, rng, cfg, scale):
        sizes = (cls.input_dim(cfg), cfg.mlp_hidden, cfg.mlp_hidden, 1)
        cls._add_mlp(params, rng, "net", sizes, scale)

    @property
    def net(self) -> List[ad.DenseLayerParams]:
        return self._layers("net", _BASELINE)

    def inputs(self, x: np.ndarray, seg: Optional[Segmentation]) -> np.ndarray:
        raise NotImplementedError

    def targets(self, curve: np.ndarray, seg: Optional[Segmentation]) -> np.ndarray:
        raise NotImplementedError

    def graph_rows(self, rows: np.ndarray) -> ad.Var:
        out = self._mlp_graph("net", _BASELINE, ad.constant(rows))
        return ad.reshape(out, (rows.shape[0],))


class MlpShotModel(MlpBaseline):
    kind = ModelKind.MLP_SHOT
    variant = "shot"

    @classmethod
    def input_dim(cls, cfg):
        return cfg.feature_dim

    def inputs(self, x, seg):
        x = self.check_features(x)
        if seg is None:
            raise ContractError("the shot baseline needs a segmentation")
        return seg.segment_means(x)

    def targets(self, curve, seg):
        return seg.segment_means(curve)


class MlpFrameModel(MlpBaseline):
    kind = ModelKind.MLP_FRAME
    variant = "frame"

    @classmethod
    def input_dim(cls, cfg):
        return cfg.window_k * cfg.feature_dim

    def inputs(self, x, seg):
        return window_features(self.check_features(x), self.config.window_k)

    def targets(self, curve, seg):
        return np.asarray(curve, dtype=np.float64)


MODEL_TYPES: Dict[ModelKind, Type[SequenceModel]] = {
    ModelKind.VSLSTM: VsLstmModel,
    ModelKind.DPPLSTM: DppLstmModel,
    ModelKind.DPPLSTM_SINGLE: DppLstmSingleModel,
    ModelKind.MLP_SHOT: MlpShotModel,
    ModelKind.MLP_FRAME: MlpFrameModel,
}


def build_model(kind: ModelKind, cfg: NetworkConfig, seed: int = 0) -> SequenceModel:
    """Freshly initialised model of ``kind``."""
    return MODEL_TYPES[ModelKind(kind)].initialize(cfg, seed)


def model_from_checkpoint(checkpoint: ModelCheckpoint) -> SequenceModel:
    """Rebuild a model from stored weights.

    Raises:
        ShapeError: If the weights do not fit the stored configuration.
    """
    model = MODEL_TYPES[checkpoint.kind].zeros(checkpoint.config)
    model.load_params(checkpoint.params)
    return model


# --------------------------------------------------------------------------
# Prediction
# --------------------------------------------------------------------------
def vslstm_predict(model: VsLstmModel, x: np.ndarray) -> ImportanceCurve:
    """Per-frame importance scores in ``(0, 1)``."""
    return ImportanceCurve(model.graph(x)["quality"].value.copy())


def dpplstm_build_kernel(model: DppLstmModel, x: np.ndarray) -> DppKernel:
    """Quality-diversity kernel ``L_tt' = y_t y_t' <phi_t, phi_t'>``."""
    return DppKernel(model.graph(x)["kernel"].value, model.config.jitter)


def dpplstm_single_build_kernel(model: DppLstmSingleModel, x: np.ndarray) -> DppKernel:
    """Kernel from the single ``f_S`` head; quality and diversity share one embedding."""
    return DppKernel(model.graph(x)["kernel"].value, model.config.jitter)


def baseline_predict(model: MlpBaseline, x: np.ndarray, seg: Optional[Segmentation] = None) -> np.ndarray:
    """One score per segment (shot variant) or per frame (frame variant)."""
    return model.graph_rows(model.inputs(x, seg)).value.copy()


# --------------------------------------------------------------------------
# Losses
# --------------------------------------------------------------------------
def square_loss_graph(
    model: SequenceModel, x: np.ndarray, target: np.ndarray, seg: Optional[Segmentation] = None
) -> ad.Var:
    """Mean squared error between predicted and target importance."""
    target = np.asarray(target, dtype=np.float64)
    if target.size and (target.min() < 0.0 or target.max() > 1.0):
        raise InvalidTargetError("importance targets must lie in [0, 1]")
    if isinstance(model, MlpBaseline):
        return ad.mean_square_error(model.graph_rows(model.inputs(x, seg)), model.targets(target, seg))
    if not isinstance(model, VsLstmModel):
        raise ContractError(f"{model.kind.value} has no importance head")
    return ad.mean_square_error(model.graph(x)["quality"], target)


def dpp_nll_graph(model: SequenceModel, x: np.ndarray, keyframes: Sequence[int]) -> ad.Var:
    """Negative DPP log-likelihood of the target keyframes."""
    if not keyframes:
        raise InvalidTargetError("empty keyframe set")
    if not isinstance(model, (DppLstmModel, DppLstmSingleModel)):
        raise ContractError(f"{model.kind.value} has no DPP kernel")
    return ad.dpp_nll(model.graph(x)["kernel"], list(keyframes), model.config.jitter)
