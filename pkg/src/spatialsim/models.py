"""Graph-network classifiers (MPGNN, RDS, Deep Set), the dual-input wrapper and
the MLP baseline.

All models output two logits per input, ordered ``(C_plus, C_minus)``: column
0 scores the positive class (label 1) and column 1 the negative class
(label 0).

Parameter shapes follow these conventions:

* node features keep ``d_x = 10`` columns, edges ``d_e = 20`` and the global
  vector ``d_u = 16`` after each pass;
* the first pass reads the initial global vector (the 10-wide node mean), so its
  MLPs take a 10-wide ``u``; later passes share one parameter set reading the
  16-wide ``u``;
* every internal MLP has ``d`` hidden layers of width ``h`` with ReLU between
  layers and a linear output.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import gradengine as ge
from .geometry import N_FEATURES
from .graphcore import GraphBatch, batch_configs, batch_graphs, build_graph

LAYER_KINDS = ("mpgnn", "rds", "deepset", "mlp")
GRAPH_KINDS = ("mpgnn", "rds", "deepset")
DEFAULT_DEPTH = {"mpgnn": 1, "rds": 2, "deepset": 4, "mlp": 2}
D_X = N_FEATURES
D_E = 2 * N_FEATURES


@dataclass
class ModelConfig:
    layer_kind: str
    task: str = "identification"
    h: int = 16
    d: int | None = None
    d_u: int = 16
    n_passes: int = 1
    self_loops: bool = False
    # MLP baseline only: padded object count and the mean count setting its width.
    mlp_n_max: int | None = None
    mlp_n_mean: float | None = None

    def __post_init__(self):
        if self.layer_kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.layer_kind!r}; expected one of {LAYER_KINDS}")
        if self.task not in ("identification", "comparison"):
            raise ValueError(f"unknown task {self.task!r}")
        if self.d is None:
            self.d = DEFAULT_DEPTH[self.layer_kind]
        if min(self.h, self.d, self.d_u, self.n_passes) < 1:
            raise ValueError("h, d, d_u and n_passes must all be at least 1")
        if self.layer_kind == "mlp":
            if self.mlp_n_max is None:
                raise ValueError("the MLP baseline needs mlp_n_max")
            if self.mlp_n_mean is None:
                self.mlp_n_mean = float(self.mlp_n_max)

    @property
    def mlp_hidden(self) -> int:
        width = int(round(self.mlp_n_mean * 16))
        return 2 * width if self.task == "comparison" else width

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def config_for_dataset(layer_kind: str, dataset, **overrides) -> ModelConfig:
    """Model configuration matching a dataset's task (and object counts, for the MLP)."""
    kw = dict(layer_kind=layer_kind, task=dataset.task)
    if layer_kind == "mlp":
        sizes = [len(c) for c in dataset.configs1]
        declared = dataset.meta.get("n_obj", [0, 0])[1]
        kw["mlp_n_max"] = max(dataset.n_obj_range()[1], declared)
        kw["mlp_n_mean"] = float(np.mean(sizes))
    kw.update(overrides)
    return ModelConfig(**kw)


# -- building blocks ----------------------------------------------------------

def init_mlp(store: ge.ParamStore, prefix: str, in_dim: int, hidden: int, depth: int,
             out_dim: int, rng: np.random.Generator) -> None:
    dims = [in_dim] + [hidden] * depth + [out_dim]
    for k, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
        ge.init_linear(store, f"{prefix}.{k}", a, b, rng)


def mlp(x, store: ge.ParamStore, prefix: str) -> ge.Tensor:
    k = 0
    while f"{prefix}.{k + 1}.W" in store:
        x = ge.relu(ge.add(ge.matmul(x, store[f"{prefix}.{k}.W"]), store[f"{prefix}.{k}.b"]))
        k += 1
    return ge.add(ge.matmul(x, store[f"{prefix}.{k}.W"]), store[f"{prefix}.{k}.b"])


def _pass_prefix(tower: str, k: int) -> str:
    return f"{tower}.p{min(k, 1)}"


def _init_tower(store: ge.ParamStore, cfg: ModelConfig, tower: str,
                rng: np.random.Generator) -> None:
    h, d, du = cfg.h, cfg.d, cfg.d_u
    if cfg.layer_kind == "deepset":
        init_mlp(store, f"{tower}.p0.node", D_X, h, d, du, rng)
        return
    for k in range(min(cfg.n_passes, 2)):
        pre = _pass_prefix(tower, k)
        u_in = D_X if k == 0 else du
        if cfg.layer_kind == "mpgnn":
            init_mlp(store, f"{pre}.edge", 2 * D_X + D_E + u_in, h, d, D_E, rng)
            init_mlp(store, f"{pre}.node", D_X + D_E + u_in, h, d, D_X, rng)
        else:
            init_mlp(store, f"{pre}.node", D_X + u_in, h, d, D_X, rng)
        init_mlp(store, f"{pre}.glob", D_X + u_in, h, d, du, rng)


# -- layers -------------------------------------------------------------------

def _as_batch(graph) -> GraphBatch:
    return graph if isinstance(graph, GraphBatch) else batch_graphs([graph])


def mpgnn_pass(graph, store: ge.ParamStore, prefix: str = "g.p0", X=None, E=None, U=None):
    """One message-passing step over edges, nodes and the global vector.

    ``E'_ij = MLP_E([X_i, X_j, E_ij, u])``, ``X'_j = MLP_X([X_j, sum_i E'_ij, u])``,
    ``u' = MLP_u([sum_j X'_j, u])``. Returns ``(X', E', U')`` as tensors.
    """
    b = _as_batch(graph)
    X = ge.as_tensor(b.X if X is None else X)
    E = ge.as_tensor(b.E if E is None else E)
    U = ge.as_tensor(b.U if U is None else U)
    n_nodes = X.shape[0]
    edge_in = ge.concat([ge.gather_rows(X, b.senders), ge.gather_rows(X, b.receivers),
                         E, ge.gather_rows(U, b.edge_graph)])
    E_new = mlp(edge_in, store, f"{prefix}.edge")
    incoming = ge.segment_sum(E_new, b.receivers, n_nodes)
    X_new = mlp(ge.concat([X, incoming, ge.gather_rows(U, b.graph_index)]), store, f"{prefix}.node")
    pooled = ge.segment_sum(X_new, b.graph_index, b.n_graphs)
    U_new = mlp(ge.concat([pooled, U]), store, f"{prefix}.glob")
    return X_new, E_new, U_new


def rds_pass(graph, store: ge.ParamStore, prefix: str = "g.p0", X=None, U=None):
    """Node update conditioned on the global vector, which is then re-aggregated."""
    b = _as_batch(graph)
    X = ge.as_tensor(b.X if X is None else X)
    U = ge.as_tensor(b.U if U is None else U)
    X_new = mlp(ge.concat([X, ge.gather_rows(U, b.graph_index)]), store, f"{prefix}.node")
    pooled = ge.segment_sum(X_new, b.graph_index, b.n_graphs)
    U_new = mlp(ge.concat([pooled, U]), store, f"{prefix}.glob")
    return X_new, U_new


def ds_pass(graph, store: ge.ParamStore, prefix: str = "g.p0"):
    b = _as_batch(graph)
    X_new = mlp(b.X, store, f"{prefix}.node")
    return ge.segment_sum(X_new, b.graph_index, b.n_graphs)


def tower_forward(batch: GraphBatch, store: ge.ParamStore, cfg: ModelConfig,
                  tower: str) -> ge.Tensor:
    """Global vectors after ``n_passes`` of the configured layer."""
    if cfg.layer_kind == "deepset":
        return ds_pass(batch, store, f"{tower}.p0")
    X, E, U = ge.as_tensor(batch.X), ge.as_tensor(batch.E), ge.as_tensor(batch.U)
    for k in range(cfg.n_passes):
        pre = _pass_prefix(tower, k)
        if cfg.layer_kind == "mpgnn":
            X, E, U = mpgnn_pass(batch, store, pre, X, E, U)
        else:
            X, U = rds_pass(batch, store, pre, X, U)
    return U


# -- models -------------------------------------------------------------------

class Model:
    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        self.seed = seed
        self.store = ge.ParamStore()
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(7,))))
        cfg = config
        if cfg.layer_kind == "mlp":
            width = cfg.mlp_n_max * D_X * (2 if cfg.task == "comparison" else 1)
            init_mlp(self.store, "mlp", width, cfg.mlp_hidden, cfg.d, 2, rng)
            return
        towers = ("g",) if cfg.task == "identification" else ("g1", "g2")
        for tower in towers:
            _init_tower(self.store, cfg, tower, rng)
        head_in = cfg.d_u * len(towers)
        init_mlp(self.store, "out", head_in, cfg.h, cfg.d, 2, rng)

    @property
    def task(self) -> str:
        return self.config.task

    def prepare(self, configs1, configs2=None):
        """Turn feature matrices into the input structure :meth:`forward` expects."""
        cfg = self.config
        if cfg.layer_kind == "mlp":
            flat = pad_flat(configs1, cfg.mlp_n_max)
            if cfg.task == "comparison":
                flat = np.concatenate([flat, pad_flat(configs2, cfg.mlp_n_max)], axis=1)
            return flat
        if cfg.task == "identification":
            return batch_configs(configs1, cfg.self_loops)
        return (batch_configs(configs1, cfg.self_loops), batch_configs(configs2, cfg.self_loops))

    def forward(self, inputs) -> ge.Tensor:
        cfg = self.config
        if cfg.layer_kind == "mlp":
            return mlp(inputs, self.store, "mlp")
        if cfg.task == "identification":
            u = tower_forward(inputs, self.store, cfg, "g")
        else:
            g1, g2 = inputs
            u = ge.concat([tower_forward(g1, self.store, cfg, "g1"),
                           tower_forward(g2, self.store, cfg, "g2")])
        return mlp(u, self.store, "out")

    def logits(self, configs1, configs2=None) -> np.ndarray:
        return self.forward(self.prepare(configs1, configs2)).data

    def state_dict(self) -> dict[str, np.ndarray]:
        return self.store.state_dict()

    def load_state_dict(self, state) -> None:
        self.store.load_state_dict(state)


def pad_flat(configs, n_max: int) -> np.ndarray:
    out = np.zeros((len(configs), n_max * D_X))
    for i, c in enumerate(configs):
        c = np.asarray(c)
        if len(c) > n_max:
            raise ValueError(f"input has {len(c)} objects, more than the padded width {n_max}")
        out[i, : c.size] = c.ravel()
    return out


def _features(x) -> np.ndarray:
    return x.features if hasattr(x, "features") else np.asarray(x, dtype=np.float64)


def classify(graph, model: Model) -> np.ndarray:
    """Logits ``(C_plus, C_minus)`` of an Identification model for one graph or configuration."""
    if model.task != "identification":
        raise ValueError("classify needs an identification model")
    if model.config.layer_kind == "mlp":
        return model.logits([_node_matrix(graph)])[0]
    return model.forward(batch_graphs([_graph(graph, model)])).data[0]


def dim_forward(g1, g2, model: Model) -> np.ndarray:
    """Logits of a dual-input Comparison model for one pair."""
    if model.task != "comparison":
        raise ValueError("dim_forward needs a comparison model")
    if model.config.layer_kind == "mlp":
        return model.logits([_node_matrix(g1)], [_node_matrix(g2)])[0]
    b1 = batch_graphs([_graph(g1, model)])
    b2 = batch_graphs([_graph(g2, model)])
    return model.forward((b1, b2)).data[0]


def _node_matrix(x) -> np.ndarray:
    return x.X if hasattr(x, "X") else _features(x)


def _graph(x, model: Model):
    return x if hasattr(x, "X") else build_graph(_features(x), model.config.self_loops)


def mlp_baseline_forward(sample, n_obj_ref: int, params: ge.ParamStore) -> np.ndarray:
    """Logits of the MLP baseline on one sample, objects flattened in stored order.

    ``n_obj_ref`` is the padded object count per configuration.
    """
    if hasattr(sample, "config"):
        flat = pad_flat([sample.config.features], n_obj_ref)
    else:
        flat = np.concatenate([pad_flat([sample.config1.features], n_obj_ref),
                               pad_flat([sample.config2.features], n_obj_ref)], axis=1)
    if flat.shape[1] != params["mlp.0.W"].shape[0]:
        raise ValueError(f"input width {flat.shape[1]} does not match the model's "
                         f"{params['mlp.0.W'].shape[0]}")
    return mlp(flat, params, "mlp").data[0]


def count_params(model: Model | ge.ParamStore) -> int:
    store = model.store if isinstance(model, Model) else model
    return store.num_scalars()


def predict_labels(logits: np.ndarray) -> np.ndarray:
    """Label 1 when ``C_plus >= C_minus``; ties go to the positive logit (index 0)."""
    return (np.argmax(logits, axis=1) == 0).astype(np.int64)


def target_index(labels: np.ndarray) -> np.ndarray:
    """Logit column holding each label's class."""
    return 1 - np.asarray(labels, dtype=np.int64)
