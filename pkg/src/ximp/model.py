"""XIMP: GNNs on the molecular graph and each abstraction, coupled by
inter-graph messages (atoms <-> abstraction nodes, and abstraction <->
abstraction through the doubly-normalized projection), plus the HIMP
two-view baseline and the weight mapping that embeds HIMP into XIMP.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from ximp.autograd import (
    ParameterStore,
    Tensor,
    add,
    add_n,
    concat_cols,
    constant,
    dropout,
    matmul,
    relu,
)
from ximp.batch import ABSTRACTIONS, Batch
from ximp.errors import ConfigError
from ximp.layers import (
    ATOM_FEATURE_DIM,
    BOND_FEATURE_DIM,
    GinLayerParams,
    gin_layer,
    gine_layer,
    init_linear,
    init_mlp,
    linear,
    mlp_head,
)
from ximp.reductions import ERG_FEATURES, JT_CATEGORIES
from ximp.rng import Rng

FEATURE_DIMS = {"jt": len(JT_CATEGORIES), "erg": len(ERG_FEATURES)}


@dataclass(frozen=True)
class ModelConfig:
    n_layers: int = 2
    hidden: int = 32
    reduced_dim: int = 32
    out_dim: int = 32
    head_hidden: int = 32
    head_layers: int = 2
    abstractions: tuple[str, ...] = ("erg", "jt")
    jt_resolution: int = 1
    enable_i2mp: bool = True
    enable_dimp: bool = True
    readout_combine: str = "concat"
    sequencing: str = "previous_layer"
    dropout: float = 0.1

    def __post_init__(self) -> None:
        abstractions = tuple(sorted(set(self.abstractions)))
        object.__setattr__(self, "abstractions", abstractions)
        unknown = set(abstractions) - set(ABSTRACTIONS)
        if unknown:
            raise ConfigError(f"unknown abstractions {sorted(unknown)}")
        if self.enable_dimp and len(abstractions) < 2:
            raise ConfigError("DIMP needs at least two abstractions")
        if self.readout_combine not in ("concat", "sum"):
            raise ConfigError(f"readout_combine must be 'concat' or 'sum', got {self.readout_combine!r}")
        if self.sequencing not in ("previous_layer", "intra_layer"):
            raise ConfigError(f"unknown sequencing {self.sequencing!r}")
        if self.jt_resolution not in (1, 2, 3):
            raise ConfigError(f"jt_resolution must be 1, 2 or 3, got {self.jt_resolution!r}")
        if min(self.n_layers, self.hidden, self.reduced_dim, self.out_dim, self.head_hidden, self.head_layers) < 1:
            raise ConfigError("layer counts and widths must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["abstractions"] = list(self.abstractions)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown model config keys {sorted(extra)}")
        d = dict(d)
        if "abstractions" in d:
            d["abstractions"] = tuple(d["abstractions"])
        return cls(**d)

    @property
    def readout_width(self) -> int:
        n = 1 + len(self.abstractions)
        return n * self.out_dim if self.readout_combine == "concat" else self.out_dim


@dataclass
class LayerState:
    x: Tensor
    t: dict[str, Tensor] = field(default_factory=dict)


@dataclass
class ForwardResult:
    prediction: Tensor
    graph_embedding: Tensor
    state: LayerState
    dimp_inputs: list[np.ndarray] = field(default_factory=list)


def _dropout(x: Tensor, p: float, rng: Rng | None) -> Tensor:
    if rng is None or p == 0.0:
        return x
    keep = rng.uniform_array(x.shape) >= p
    return dropout(x, keep, p)


# --------------------------------------------------------------------------
# XIMP building blocks
# --------------------------------------------------------------------------


def i2mp_step(
    t_source: dict[str, Tensor],
    x_source: Tensor | None,
    batch: Batch,
    store: ParameterStore,
    layer: int,
    names,
) -> tuple[dict[str, Tensor], dict[str, Tensor]]:
    """Atom-side terms ``relu(S~_i T_i W_i1)`` and node-side ``relu(S~_i^T X W_i2)``.

    ``x_source`` may be None to compute only the atom-side terms.
    """
    to_atoms, to_nodes = {}, {}
    for name in names:
        ab = batch.abstractions[name]
        pre = f"layer{layer}.i2mp.{name}"
        to_atoms[name] = relu(matmul(ab.s_row, matmul(t_source[name], store[f"{pre}.to_atoms.weight"])))
        if x_source is not None:
            to_nodes[name] = relu(matmul(ab.s_col, matmul(x_source, store[f"{pre}.to_nodes.weight"])))
    return to_atoms, to_nodes


def dimp_step(
    t_source: dict[str, Tensor],
    batch: Batch,
    store: ParameterStore,
    layer: int,
    names,
    monitor: list | None = None,
) -> dict[tuple[str, str], Tensor]:
    """``relu(S~_ik T_k W_{k->i})`` for every ordered pair ``i != k``; keyed ``(k, i)``."""
    if len(names) < 2:
        raise ConfigError("DIMP needs at least two abstractions")
    out = {}
    for i in names:
        for k in names:
            if i == k:
                continue
            projected = matmul(batch.dimp[(i, k)], t_source[k])
            if monitor is not None:
                monitor.append((batch.dimp[(i, k)], t_source[k].value, projected.value))
            out[(k, i)] = relu(matmul(projected, store[f"layer{layer}.dimp.{k}_to_{i}.weight"]))
    return out


def layer_forward(
    state: LayerState,
    batch: Batch,
    store: ParameterStore,
    config: ModelConfig,
    layer: int,
    rng: Rng | None = None,
    monitor: list | None = None,
) -> LayerState:
    """One XIMP layer.

    With ``sequencing="previous_layer"`` every term reads only the previous
    layer's embeddings. With ``"intra_layer"`` the atom update reads the
    abstraction GNN outputs of this layer and the node update reads the
    freshly updated atom embeddings (HIMP's order).
    """
    names = config.abstractions
    x_gnn = gine_layer(
        state.x, (batch.src, batch.dst), constant(batch.edge_attr), GinLayerParams(store, f"layer{layer}.g", True)
    )
    x_gnn = _dropout(x_gnn, config.dropout, rng)
    t_gnn = {}
    for name in names:
        ab = batch.abstractions[name]
        t = gin_layer(state.t[name], (ab.src, ab.dst), GinLayerParams(store, f"layer{layer}.{name}"))
        t_gnn[name] = _dropout(t, config.dropout, rng)

    if config.sequencing == "previous_layer":
        t_src = state.t
    else:
        t_src = t_gnn

    x_terms = [x_gnn]
    to_nodes: dict[str, Tensor] = {}
    if config.enable_i2mp and names:
        x_read = state.x if config.sequencing == "previous_layer" else None
        to_atoms, to_nodes = i2mp_step(t_src, x_read, batch, store, layer, names)
        x_terms += [to_atoms[n] for n in names]
    x_new = add_n(x_terms)
    if config.enable_i2mp and names and config.sequencing == "intra_layer":
        _, to_nodes = i2mp_step({n: t_src[n] for n in names}, x_new, batch, store, layer, names)

    dimp_msgs = {}
    if config.enable_dimp:
        dimp_msgs = dimp_step(t_src, batch, store, layer, names, monitor)

    t_new = {}
    for i in names:
        terms = [t_gnn[i]]
        if i in to_nodes:
            terms.append(to_nodes[i])
        terms += [dimp_msgs[(k, i)] for k in names if k != i and (k, i) in dimp_msgs]
        t_new[i] = add_n(terms)
    return LayerState(x_new, t_new)


def readout(state: LayerState, batch: Batch, store: ParameterStore, config: ModelConfig) -> Tensor:
    """Mean-pool each view, project it, and concatenate or sum the results."""
    parts = [matmul(matmul(batch.pool, state.x), store["readout.atoms.weight"])]
    for name in config.abstractions:
        pooled = matmul(batch.abstractions[name].pool, state.t[name])
        parts.append(matmul(pooled, store[f"readout.{name}.weight"]))
    if config.readout_combine == "concat":
        return concat_cols(parts)
    return add_n(parts)


class XimpModel:
    def __init__(self, config: ModelConfig, seed: int = 0) -> None:
        self.config = config
        self.params = ParameterStore()
        self._init(Rng.derive(seed, 0x1417))

    def _init(self, rng: Rng) -> None:
        c, store = self.config, self.params
        d, r = c.hidden, c.reduced_dim
        init_linear(store, rng, "embed.atoms", ATOM_FEATURE_DIM, d)
        for name in c.abstractions:
            init_linear(store, rng, f"embed.{name}", FEATURE_DIMS[name], r)
        for layer in range(1, c.n_layers + 1):
            GinLayerParams.create(store, rng, f"layer{layer}.g", d, BOND_FEATURE_DIM)
            for name in c.abstractions:
                GinLayerParams.create(store, rng, f"layer{layer}.{name}", r)
                if c.enable_i2mp:
                    init_linear(store, rng, f"layer{layer}.i2mp.{name}.to_atoms", r, d, bias=False)
                    init_linear(store, rng, f"layer{layer}.i2mp.{name}.to_nodes", d, r, bias=False)
            if c.enable_dimp:
                for i in c.abstractions:
                    for k in c.abstractions:
                        if i != k:
                            init_linear(store, rng, f"layer{layer}.dimp.{k}_to_{i}", r, r, bias=False)
        init_linear(store, rng, "readout.atoms", d, c.out_dim, bias=False)
        for name in c.abstractions:
            init_linear(store, rng, f"readout.{name}", r, c.out_dim, bias=False)
        widths = [c.readout_width] + [c.head_hidden] * (c.head_layers - 1) + [1]
        init_mlp(store, rng, "head", widths)

    def initial_state(self, batch: Batch) -> LayerState:
        x = linear(constant(batch.atom_x), self.params, "embed.atoms")
        t = {
            name: linear(constant(batch.abstractions[name].x), self.params, f"embed.{name}")
            for name in self.config.abstractions
        }
        return LayerState(x, t)

    def forward(self, batch: Batch, rng: Rng | None = None, monitor: list | None = None) -> ForwardResult:
        """Predict one value per graph. Passing ``rng`` enables dropout (training)."""
        state = self.initial_state(batch)
        for layer in range(1, self.config.n_layers + 1):
            state = layer_forward(state, batch, self.params, self.config, layer, rng, monitor)
        h = readout(state, batch, self.params, self.config)
        pred = mlp_head(h, self.params, "head", self.config.head_layers)
        return ForwardResult(pred, h, state)


# --------------------------------------------------------------------------
# HIMP baseline
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class HimpConfig:
    n_layers: int = 2
    hidden: int = 32
    head_hidden: int = 32
    head_layers: int = 2
    inter_message_passing: bool = True
    normalize: bool = True
    dropout: float = 0.1

    def to_dict(self) -> dict:
        return asdict(self)


class HimpModel:
    """Molecular graph (GIN-E) + junction tree (GIN) with sequential inter-messages.

    Per layer: both GNNs run, atoms receive ``relu(S T W1)`` from the updated
    tree, then tree nodes receive ``relu(S^T X W2)`` from the already updated
    atoms. Readout sums the mean-pooled atom and tree embeddings. With
    ``normalize`` the projections average over memberships (row-normalized
    ``S`` in both directions); otherwise raw ``S`` / ``S^T`` sums are used.
    """

    def __init__(self, config: HimpConfig, seed: int = 0) -> None:
        self.config = config
        self.params = ParameterStore()
        rng = Rng.derive(seed, 0x4151)
        d, store = config.hidden, self.params
        init_linear(store, rng, "atom_encoder", ATOM_FEATURE_DIM, d)
        init_linear(store, rng, "clique_encoder", len(JT_CATEGORIES), d)
        for layer in range(config.n_layers):
            GinLayerParams.create(store, rng, f"atom_convs.{layer}", d, BOND_FEATURE_DIM)
            GinLayerParams.create(store, rng, f"clique_convs.{layer}", d)
            if config.inter_message_passing:
                init_linear(store, rng, f"clique2atom.{layer}", d, d, bias=False)
                init_linear(store, rng, f"atom2clique.{layer}", d, d, bias=False)
        widths = [d] + [config.head_hidden] * (config.head_layers - 1) + [1]
        init_mlp(store, rng, "head", widths)

    def forward(self, batch: Batch, rng: Rng | None = None) -> ForwardResult:
        return himp_forward(batch, self.params, self.config, rng)


def himp_forward(batch: Batch, store: ParameterStore, config: HimpConfig, rng: Rng | None = None) -> ForwardResult:
    jt = batch.abstractions["jt"]
    to_atoms = jt.s_row if config.normalize else jt.s
    to_tree = jt.s_col if config.normalize else jt.s.T.tocsr()
    x = linear(constant(batch.atom_x), store, "atom_encoder")
    t = linear(constant(jt.x), store, "clique_encoder")
    edge_attr = constant(batch.edge_attr)
    for layer in range(config.n_layers):
        x = gine_layer(x, (batch.src, batch.dst), edge_attr, GinLayerParams(store, f"atom_convs.{layer}", True))
        t = gin_layer(t, (jt.src, jt.dst), GinLayerParams(store, f"clique_convs.{layer}"))
        x = _dropout(x, config.dropout, rng)
        t = _dropout(t, config.dropout, rng)
        if config.inter_message_passing:
            x = add(x, relu(matmul(to_atoms, matmul(t, store[f"clique2atom.{layer}.weight"]))))
            t = add(t, relu(matmul(to_tree, matmul(x, store[f"atom2clique.{layer}.weight"]))))
    h = add(matmul(batch.pool, x), matmul(jt.pool, t))
    pred = mlp_head(h, store, "head", config.head_layers)
    return ForwardResult(pred, h, LayerState(x, {"jt": t}))


def ximp_from_himp(himp: HimpModel) -> XimpModel:
    """XIMP with one junction-tree abstraction realizing the same function as ``himp``.

    DIMP off, intra-layer sequencing, sum readout with identity projections;
    every GNN, inter-message and head weight is copied over.
    """
    hc = himp.config
    if not hc.normalize:
        raise ConfigError("the embedding needs HIMP with normalized inter-message projections")
    config = ModelConfig(
        n_layers=hc.n_layers,
        hidden=hc.hidden,
        reduced_dim=hc.hidden,
        out_dim=hc.hidden,
        head_hidden=hc.head_hidden,
        head_layers=hc.head_layers,
        abstractions=("jt",),
        jt_resolution=1,
        enable_i2mp=hc.inter_message_passing,
        enable_dimp=False,
        readout_combine="sum",
        sequencing="intra_layer",
        dropout=hc.dropout,
    )
    model = XimpModel(config)
    src = himp.params
    mapping = {"embed.atoms": "atom_encoder", "embed.jt": "clique_encoder", "head": "head"}
    for layer in range(hc.n_layers):
        mapping[f"layer{layer + 1}.g"] = f"atom_convs.{layer}"
        mapping[f"layer{layer + 1}.jt"] = f"clique_convs.{layer}"
        mapping[f"layer{layer + 1}.i2mp.jt.to_atoms"] = f"clique2atom.{layer}"
        mapping[f"layer{layer + 1}.i2mp.jt.to_nodes"] = f"atom2clique.{layer}"
    state = {}
    for name in model.params.names():
        if name.startswith("readout."):
            state[name] = np.eye(hc.hidden)
            continue
        prefix = max((p for p in mapping if name.startswith(p + ".")), key=len)
        state[name] = src[mapping[prefix] + name[len(prefix) :]].value
    model.params.load_state_dict(state)
    return model


def build_model(config: ModelConfig | HimpConfig, seed: int = 0):
    if isinstance(config, HimpConfig):
        return HimpModel(config, seed)
    return XimpModel(config, seed)


def with_overrides(config: ModelConfig, **kw) -> ModelConfig:
    return replace(config, **kw)
