"""Knowledge encoder: d-DNNF graphs -> GCN embeddings.

A compiled formula becomes an undirected graph (one node per d-DNNF node
plus a global node linked to everything, self-loops added) and is encoded
with a multi-layer GCN using the symmetric-normalized propagation rule.
Node heterogeneity is realized by routing each node's row through the weight
matrix of its node type before aggregation.  The formula embedding is the
global node's output row.

Pretraining separates formula embeddings from the embeddings of their
unsatisfying assignments with a triplet objective plus structural
regularizers, and is run once before detector training; the resulting
embedding set E_F is frozen.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .autodiff import ParamSet, Tape, accumulate_grads, bind_params
from .ddnnf import DdnnfGraph, K_AND, K_FALSE, K_LEAF, K_OR, K_TRUE, eval_ddnnf
from .errors import DataError, ShapeError
from .logic import assignments

NODE_TYPES = ("and", "or", "leaf", "global")
TYPE_INDEX = {t: i for i, t in enumerate(NODE_TYPES)}

MAX_ENUM_VARS = 16


@dataclass
class FormulaGraph:
    node_types: np.ndarray  # int codes into NODE_TYPES
    features: np.ndarray  # N x (4 + var_capacity)
    adj: np.ndarray  # symmetric, self-loops on the diagonal
    children: list[tuple[int, ...]]  # d-DNNF child lists (empty for global)
    global_index: int

    def norm_adj(self) -> np.ndarray:
        deg = self.adj.sum(axis=1)
        inv_sqrt = 1.0 / np.sqrt(deg)
        return self.adj * inv_sqrt[:, None] * inv_sqrt[None, :]


def ddnnf_to_graph(graph: DdnnfGraph, var_capacity: int) -> FormulaGraph:
    """Augmented undirected graph for one compiled formula.

    Only nodes reachable from the root are kept.  TRUE/FALSE sinks map to
    leaf-typed nodes with an all-zero literal encoding.  Initial features are
    the node-type one-hot concatenated with a signed variable one-hot for
    literal leaves, padded to 4 + var_capacity.
    """
    reachable = set()
    stack = [graph.root]
    while stack:
        nid = stack.pop()
        if nid in reachable:
            continue
        reachable.add(nid)
        stack.extend(graph.children[nid])
    order = sorted(reachable)
    remap = {nid: i for i, nid in enumerate(order)}
    n = len(order) + 1  # plus the global node
    global_index = n - 1

    type_codes = np.empty(n, dtype=np.int64)
    features = np.zeros((n, 4 + var_capacity))
    children: list[tuple[int, ...]] = []
    adj = np.zeros((n, n))
    for nid in order:
        i = remap[nid]
        kind = graph.kinds[nid]
        if kind == K_AND:
            code = TYPE_INDEX["and"]
        elif kind == K_OR:
            code = TYPE_INDEX["or"]
        else:  # leaf, true, false
            code = TYPE_INDEX["leaf"]
        type_codes[i] = code
        features[i, code] = 1.0
        if kind == K_LEAF:
            lit = graph.literals[nid]
            var = abs(lit)
            if var > var_capacity:
                raise ShapeError(
                    f"literal variable {var} exceeds encoder capacity {var_capacity}"
                )
            features[i, 4 + var - 1] = 1.0 if lit > 0 else -1.0
        kids = tuple(remap[c] for c in graph.children[nid])
        children.append(kids)
        for c in kids:
            adj[i, c] = 1.0
            adj[c, i] = 1.0
    type_codes[global_index] = TYPE_INDEX["global"]
    features[global_index, TYPE_INDEX["global"]] = 1.0
    children.append(())
    adj[global_index, :] = 1.0
    adj[:, global_index] = 1.0
    np.fill_diagonal(adj, 1.0)
    return FormulaGraph(type_codes, features, adj, children, global_index)


@dataclass
class KnowEncoderSpec:
    n_layers: int = 2
    hidden_width: int = 16
    embed_width: int = 16
    var_capacity: int = 24

    @property
    def input_width(self) -> int:
        return 4 + self.var_capacity

    def layer_dims(self) -> list[tuple[int, int]]:
        widths = [self.input_width]
        widths += [self.hidden_width] * (self.n_layers - 1)
        widths += [self.embed_width]
        return list(zip(widths[:-1], widths[1:]))


def param_name(layer: int, node_type: str) -> str:
    return f"know_encoder/layer{layer}/{node_type}"


def init_know_encoder(spec: KnowEncoderSpec, rng: np.random.Generator) -> ParamSet:
    values = {}
    for l, (fan_in, fan_out) in enumerate(spec.layer_dims()):
        scale = np.sqrt(2.0 / (fan_in + fan_out))
        for t in NODE_TYPES:
            values[param_name(l, t)] = rng.normal(size=(fan_in, fan_out)) * scale
    return ParamSet(values)


def _type_masks(fg: FormulaGraph) -> list[np.ndarray]:
    return [(fg.node_types == i).astype(np.float64).reshape(-1, 1) for i in range(4)]


def gcn_forward(fg: FormulaGraph, spec: KnowEncoderSpec, params: ParamSet) -> np.ndarray:
    """Node embeddings after all layers (numpy path, used for frozen E_F)."""
    if fg.features.shape[1] != spec.input_width:
        raise ShapeError(
            f"feature width {fg.features.shape[1]} != encoder input {spec.input_width}"
        )
    norm = fg.norm_adj()
    masks = _type_masks(fg)
    z = fg.features
    n_layers = spec.n_layers
    for l in range(n_layers):
        h = np.zeros((z.shape[0], spec.layer_dims()[l][1]))
        for ti, t in enumerate(NODE_TYPES):
            h = h + masks[ti] * (z @ params.values[param_name(l, t)])
        z = norm @ h
        if l < n_layers - 1:
            z = np.maximum(z, 0.0)
    return z


def gcn_forward_tape(
    tape: Tape, fg: FormulaGraph, spec: KnowEncoderSpec, ids: dict[str, int]
) -> int:
    norm = tape.leaf(fg.norm_adj())
    masks = _type_masks(fg)
    z = tape.leaf(fg.features)
    for l in range(spec.n_layers):
        out_w = spec.layer_dims()[l][1]
        h = None
        for ti, t in enumerate(NODE_TYPES):
            routed = tape.matmul(z, ids[param_name(l, t)])
            masked = tape.hadamard(tape.broadcast_col(tape.leaf(masks[ti]), out_w), routed)
            h = masked if h is None else tape.add(h, masked)
        z = tape.matmul(norm, h)
        if l < spec.n_layers - 1:
            z = tape.relu(z)
    return z


def formula_embedding(node_embeddings: np.ndarray, fg: FormulaGraph) -> np.ndarray:
    """The global node's row, as a 1 x h matrix."""
    return node_embeddings[fg.global_index : fg.global_index + 1, :]


def formula_embedding_tape(tape: Tape, z_id: int, fg: FormulaGraph) -> int:
    n = tape.value(z_id).shape[0]
    selector = np.zeros((1, n))
    selector[0, fg.global_index] = 1.0
    return tape.matmul(tape.leaf(selector), z_id)


def embed_knowledge_set(
    graphs: list[DdnnfGraph], spec: KnowEncoderSpec, params: ParamSet
) -> np.ndarray:
    """E_F: one frozen embedding row per formula."""
    rows = []
    for g in graphs:
        fg = ddnnf_to_graph(g, spec.var_capacity)
        rows.append(formula_embedding(gcn_forward(fg, spec, params), fg))
    return np.vstack(rows) if rows else np.zeros((0, spec.embed_width))


# ---------------------------------------------------------------------------
# Pretraining
# ---------------------------------------------------------------------------


def assignment_graph(assignment: dict[int, bool]) -> DdnnfGraph:
    """Conjunction-of-literals d-DNNF for a full assignment."""
    lits = [v if val else -v for v, val in sorted(assignment.items())]
    if not lits:
        raise ValueError("assignment over zero variables")
    kinds = [K_LEAF] * len(lits)
    literals = list(lits)
    children: list[tuple[int, ...]] = [() for _ in lits]
    if len(lits) == 1:
        return DdnnfGraph(kinds, literals, children, root=0)
    kinds.append(K_AND)
    literals.append(0)
    children.append(tuple(range(len(lits))))
    return DdnnfGraph(kinds, literals, children, root=len(lits))


@dataclass
class PretrainConfig:
    n_layers: int = 2
    hidden_width: int = 16
    embed_width: int = 16
    var_capacity: int = 24
    margin: float = 1.0
    learning_rate: float = 0.05
    steps: int = 300
    and_reg: float = 0.1
    or_reg: float = 0.1
    val_pairs: int = 4
    eval_every: int = 20
    seed: int = 0

    def spec(self) -> KnowEncoderSpec:
        return KnowEncoderSpec(
            self.n_layers, self.hidden_width, self.embed_width, self.var_capacity
        )


@dataclass
class PretrainResult:
    spec: KnowEncoderSpec
    params: ParamSet
    loss_history: list[float] = field(default_factory=list)
    val_history: list[tuple[int, float]] = field(default_factory=list)
    best_val_accuracy: float = 0.0
    skipped: list[int] = field(default_factory=list)


def _sat_unsat_assignments(graph: DdnnfGraph):
    variables = sorted(graph.varsets[graph.root])
    if len(variables) > MAX_ENUM_VARS:
        raise ValueError(f"formula has {len(variables)} variables; enumeration bound is {MAX_ENUM_VARS}")
    sat, unsat = [], []
    for assignment in assignments(variables):
        (sat if eval_ddnnf(graph, assignment) else unsat).append(assignment)
    return sat, unsat


def pretrain_encoder(graphs: list[DdnnfGraph], config: PretrainConfig) -> PretrainResult:
    """Train the knowledge encoder on (formula, sat, unsat) triplets.

    The triplet loss max(0, d(e_f, e_sat) - d(e_f, e_unsat) + margin) is
    averaged over one sampled triple per usable formula per step; AND nodes
    are pulled toward the mean of their children, OR children toward unit
    mean squared spread.  Plain gradient descent with a fixed step; the
    returned parameters are the snapshot with the best held-out triplet
    accuracy.  Formulae with no satisfying or no falsifying assignment are
    skipped with a warning.
    """
    spec = config.spec()
    rng = np.random.default_rng(config.seed)
    params = init_know_encoder(spec, rng)

    usable = []
    skipped = []
    for idx, g in enumerate(graphs):
        vars_ = g.varsets[g.root]
        if not vars_:
            warnings.warn(f"formula {idx} is constant; skipped in pretraining")
            skipped.append(idx)
            continue
        sat, unsat = _sat_unsat_assignments(g)
        if not sat or not unsat:
            warnings.warn(
                f"formula {idx} is {'unsatisfiable' if not sat else 'tautological'}; skipped"
            )
            skipped.append(idx)
            continue
        fg = ddnnf_to_graph(g, spec.var_capacity)
        usable.append((fg, sat, unsat))
    if len(usable) < 2:
        raise DataError(f"pretraining needs at least 2 usable formulae, got {len(usable)}")

    graph_cache: dict[frozenset, FormulaGraph] = {}

    def fg_of(assignment: dict[int, bool]) -> FormulaGraph:
        key = frozenset((v if b else -v) for v, b in assignment.items())
        if key not in graph_cache:
            graph_cache[key] = ddnnf_to_graph(assignment_graph(assignment), spec.var_capacity)
        return graph_cache[key]

    val_triples = []
    for fg, sat, unsat in usable:
        for _ in range(config.val_pairs):
            val_triples.append(
                (fg, fg_of(sat[rng.integers(len(sat))]), fg_of(unsat[rng.integers(len(unsat))]))
            )

    def val_accuracy(p: ParamSet) -> float:
        hits = 0
        for fg, fg_sat, fg_unsat in val_triples:
            e_f = formula_embedding(gcn_forward(fg, spec, p), fg)
            e_s = formula_embedding(gcn_forward(fg_sat, spec, p), fg_sat)
            e_u = formula_embedding(gcn_forward(fg_unsat, spec, p), fg_unsat)
            if ((e_f - e_s) ** 2).sum() < ((e_f - e_u) ** 2).sum():
                hits += 1
        return hits / len(val_triples)

    result = PretrainResult(spec, params.copy(), skipped=skipped)
    best_acc = val_accuracy(params)
    result.best_val_accuracy = best_acc
    result.val_history.append((0, best_acc))

    for step in range(config.steps):
        tape = Tape()
        ids = bind_params(tape, params)
        margin = tape.scalar(config.margin)
        triplet_total = None
        and_total, or_total = None, None
        n_and, n_or = 0, 0
        for fg, sat, unsat in usable:
            z_id = gcn_forward_tape(tape, fg, spec, ids)
            e_f = formula_embedding_tape(tape, z_id, fg)
            fg_sat = fg_of(sat[rng.integers(len(sat))])
            fg_unsat = fg_of(unsat[rng.integers(len(unsat))])
            z_sat = gcn_forward_tape(tape, fg_sat, spec, ids)
            z_unsat = gcn_forward_tape(tape, fg_unsat, spec, ids)
            e_s = formula_embedding_tape(tape, z_sat, fg_sat)
            e_u = formula_embedding_tape(tape, z_unsat, fg_unsat)
            d_pos = tape.row_sum(tape.square(tape.sub(e_f, e_s)))
            d_neg = tape.row_sum(tape.square(tape.sub(e_f, e_u)))
            t_loss = tape.relu(tape.add(tape.sub(d_pos, d_neg), margin))
            triplet_total = t_loss if triplet_total is None else tape.add(triplet_total, t_loss)

            a_pen, a_n, o_pen, o_n = _structure_penalties(tape, fg, z_id)
            if a_pen is not None:
                and_total = a_pen if and_total is None else tape.add(and_total, a_pen)
                n_and += a_n
            if o_pen is not None:
                or_total = o_pen if or_total is None else tape.add(or_total, o_pen)
                n_or += o_n

        loss = tape.smul(triplet_total, 1.0 / len(usable))
        if and_total is not None and config.and_reg > 0:
            loss = tape.add(loss, tape.smul(and_total, config.and_reg / n_and))
        if or_total is not None and config.or_reg > 0:
            loss = tape.add(loss, tape.smul(or_total, config.or_reg / n_or))

        result.loss_history.append(float(tape.value(loss)[0, 0]))
        params.zero_grads()
        accumulate_grads(params, ids, tape.backward(loss))
        for name in params.values:
            params.values[name] = params.values[name] - config.learning_rate * params.grads[name]

        if (step + 1) % config.eval_every == 0 or step + 1 == config.steps:
            acc = val_accuracy(params)
            result.val_history.append((step + 1, acc))
            if acc > best_acc:
                best_acc = acc
                result.params = params.copy()
                result.best_val_accuracy = acc
    return result


def _structure_penalties(tape: Tape, fg: FormulaGraph, z_id: int):
    """AND: squared distance of node to child mean.  OR: (spread - 1)^2."""
    n = tape.value(z_id).shape[0]
    and_total, or_total = None, None
    n_and = n_or = 0
    for i, kids in enumerate(fg.children):
        if not kids:
            continue
        sel_node = np.zeros((1, n))
        sel_node[0, i] = 1.0
        mean_row = np.zeros((1, n))
        mean_row[0, list(kids)] = 1.0 / len(kids)
        z_mean = tape.matmul(tape.leaf(mean_row), z_id)
        if fg.node_types[i] == TYPE_INDEX["and"]:
            z_node = tape.matmul(tape.leaf(sel_node), z_id)
            pen = tape.row_sum(tape.square(tape.sub(z_node, z_mean)))
            and_total = pen if and_total is None else tape.add(and_total, pen)
            n_and += 1
        elif fg.node_types[i] == TYPE_INDEX["or"]:
            spread = None
            for c in kids:
                sel_c = np.zeros((1, n))
                sel_c[0, c] = 1.0
                z_c = tape.matmul(tape.leaf(sel_c), z_id)
                d = tape.row_sum(tape.square(tape.sub(z_c, z_mean)))
                spread = d if spread is None else tape.add(spread, d)
            spread = tape.smul(spread, 1.0 / len(kids))
            pen = tape.square(tape.sub(spread, tape.scalar(1.0)))
            or_total = pen if or_total is None else tape.add(or_total, pen)
            n_or += 1
    return and_total, n_and, or_total, n_or
