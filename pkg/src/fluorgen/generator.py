"""Reinforcement-learned assembly of candidate fluorophores.

A rollout walks a synthesis tree: sample a reaction template and a block
for its first role, fill the remaining roles, apply the reaction, then
decide whether to keep reacting the product (up to a step budget) or
stop. Choices are drawn from a softmax over learned value estimates, the
final molecule is scored by the four reward properties, and the visited
nodes land in a replay buffer that periodically retrains the value
networks. Temperature chases a target nearest-neighbor similarity;
property weights shift toward whichever property is currently failing.

Everything downstream of the seed is deterministic, including the output
files: rerunning a config reproduces them byte for byte.
"""

from __future__ import annotations

import collections
import random
from dataclasses import dataclass

import numpy as np

from fluorgen.fingerprints import (
    FEATURE_DIM,
    FP_BITS,
    Fingerprint,
    SolventFeatures,
    morgan_fingerprint,
    tanimoto,
)
from fluorgen.molgraph import MolecularGraph, sp2_network_size
from fluorgen.patterns import has_match
from fluorgen.reactions import (
    BlockLibrary,
    CompatibilityIndex,
    apply_reaction,
)
from fluorgen.scorers import (
    Head,
    MlpModel,
    PropertyScorer,
    ScorerKind,
    forward_batch,
    loss_and_grads,
    score_property,
)
from fluorgen.smiles import write_canonical_smiles

PROPERTY_ORDER = (
    ScorerKind.PLQY_PROB,
    ScorerKind.ABS_NM,
    ScorerKind.EM_NM,
    ScorerKind.SP2_SIZE,
)
N_PROPERTIES = len(PROPERTY_ORDER)

VISIBLE_MIN_NM = 420.0
VISIBLE_MAX_NM = 750.0
SP2_TARGET = 12

PREV_MARKER = "@prev"


class GeneratorError(ValueError):
    pass


@dataclass(frozen=True)
class GenerationConfig:
    """Knobs for one generation run.

    :param n_rollouts: number of rollouts to attempt.
    :param tau_init: starting softmax temperature.
    :param tau_min: lower clamp for the temperature controller.
    :param tau_max: upper clamp for the temperature controller.
    :param target_similarity: nearest-neighbor Tanimoto the controller
        steers toward.
    :param eta: multiplicative controller gain per rollout.
    :param window: rolling-window length for similarity and success rates.
    :param train_interval: rollouts between value-network updates.
    :param max_steps: reaction steps allowed per molecule.
    :param buffer_capacity: replay-buffer size, FIFO eviction.
    :param value_hidden: hidden width of each value network.
    :param value_epochs: epochs per value-network update.
    :param value_lr: learning rate for value-network updates.
    :param value_batch: mini-batch size for value-network updates.
    :param weight_floor: minimum property weight.
    :param seed: seed fixing every stochastic choice of the run.
    """

    n_rollouts: int = 10_000
    tau_init: float = 0.1
    tau_min: float = 0.005
    tau_max: float = 10.0
    target_similarity: float = 0.6
    eta: float = 0.01
    window: int = 100
    train_interval: int = 10
    max_steps: int = 2
    buffer_capacity: int = 2_000
    value_hidden: int = 32
    value_epochs: int = 4
    value_lr: float = 0.05
    value_batch: int = 32
    weight_floor: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.n_rollouts < 0:
            raise GeneratorError("n_rollouts must be non-negative")
        if not 0 < self.tau_min <= self.tau_init <= self.tau_max:
            raise GeneratorError("need 0 < tau_min <= tau_init <= tau_max")
        if not 0.0 < self.target_similarity < 1.0:
            raise GeneratorError("target_similarity must lie in (0,1)")
        if self.weight_floor * N_PROPERTIES > 1.0:
            raise GeneratorError("weight_floor too large for the simplex")
        for name in ("eta", "window", "train_interval", "max_steps",
                     "buffer_capacity", "value_hidden", "value_epochs",
                     "value_lr", "value_batch"):
            if getattr(self, name) <= 0:
                raise GeneratorError(f"{name} must be positive")


@dataclass(frozen=True)
class RouteStep:
    """One reaction application: inputs are block ids in role order, with
    the previous step's product written as the ``@prev`` marker."""

    template_id: str
    inputs: tuple[str, ...]
    product_index: int


@dataclass(frozen=True)
class GeneratedMolecule:
    smiles: str
    route: tuple[RouteStep, ...]
    scores: tuple[float, ...]  # M_k in PROPERTY_ORDER
    combined: float  # p(m) under the weights below
    weights: tuple[float, ...]  # weights in force when the molecule was scored
    rollout: int


@dataclass(frozen=True)
class RolloutLog:
    rollout: int
    tau: float
    weights: tuple[float, ...]
    success_rates: tuple[float, ...]
    similarity: float | None
    status: str  # "ok", "duplicate", or "dead"


@dataclass(frozen=True)
class GenerationResult:
    molecules: tuple[GeneratedMolecule, ...]
    log: tuple[RolloutLog, ...]
    reaction_usage: dict[str, int]
    dead_ends: int
    duplicates: int


class ReplayBuffer:
    """FIFO store of (node features, reward targets) pairs."""

    def __init__(self, capacity: int):
        if capacity <= 0:
            raise GeneratorError("buffer capacity must be positive")
        self._items = collections.deque(maxlen=capacity)

    def append(self, features: np.ndarray, targets: tuple[float, ...]):
        if len(targets) != N_PROPERTIES:
            raise GeneratorError(f"expected {N_PROPERTIES} targets")
        self._items.append((np.asarray(features, dtype=np.float64), tuple(targets)))

    def __len__(self) -> int:
        return len(self._items)

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        features = np.stack([item[0] for item in self._items])
        targets = np.array([item[1] for item in self._items], dtype=np.float64)
        return features, targets


def node_features(fingerprints, solvent: SolventFeatures) -> np.ndarray:
    """Feature vector for a set of molecules: bit-OR of their
    fingerprints followed by the solvent features.

    :param fingerprints: one or more Fingerprint values.
    :param solvent: solvent descriptors appended as the last four entries.
    """
    fingerprints = list(fingerprints)
    if not fingerprints:
        raise GeneratorError("node has no molecules")
    bits = 0
    for fp in fingerprints:
        bits |= fp.bits
    return _features_from_bits(bits, solvent)


def _features_from_bits(bits: int, solvent: SolventFeatures) -> np.ndarray:
    out = np.zeros(FEATURE_DIM, dtype=np.float64)
    index = 0
    while bits:
        if bits & 1:
            out[index] = 1.0
        bits >>= 1
        index += 1
    out[FP_BITS:] = solvent.as_tuple()
    return out


def node_value(features: np.ndarray, models, weights) -> float:
    """V(N) = sum_k w_k * Z_k(features)."""
    if len(models) != len(weights):
        raise GeneratorError("one value model per weight required")
    total = 0.0
    for model, weight in zip(models, weights):
        total += weight * float(forward_batch(model, features[np.newaxis, :])[0])
    return total


def softmax_probabilities(values, tau: float) -> np.ndarray:
    """Selection probabilities e^{V_i/tau} / sum_j e^{V_j/tau}, computed
    with max subtraction so large values cannot overflow.

    :param values: candidate values, all finite, at least one.
    :param tau: softmax temperature, positive.
    """
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise GeneratorError("no candidates to sample")
    if tau <= 0:
        raise GeneratorError("temperature must be positive")
    if not np.all(np.isfinite(arr)):
        raise GeneratorError("non-finite candidate value")
    shifted = (arr - arr.max()) / tau
    probabilities = np.exp(shifted)
    return probabilities / probabilities.sum()


def sample_child(values, tau: float, rng: random.Random) -> int:
    """Draw an index with probability proportional to e^{V/tau}.

    :param values: candidate values, all finite.
    :param tau: softmax temperature, positive.
    :param rng: run RNG; the single source of randomness.
    """
    probabilities = softmax_probabilities(values, tau)
    cutoff = rng.random()
    cumulative = np.cumsum(probabilities)
    return min(
        int(np.searchsorted(cumulative, cutoff, side="right")), probabilities.size - 1
    )


def reward(graph: MolecularGraph, scorers, weights, solvent: SolventFeatures):
    """Per-property scores and their weighted combination.

    PLQY is the classifier probability; absorption and emission binarize
    to 1 when the predicted wavelength falls in the visible window; the
    sp2 score is the network size over the target 12, clamped to 1.

    :param scorers: mapping from ScorerKind to PropertyScorer.
    :param weights: property weights in PROPERTY_ORDER.
    :returns: (scores tuple, combined p(m)).
    """
    plqy = score_property(scorers[ScorerKind.PLQY_PROB], graph, solvent)
    absorption = score_property(scorers[ScorerKind.ABS_NM], graph, solvent)
    emission = score_property(scorers[ScorerKind.EM_NM], graph, solvent)
    sp2 = score_property(scorers[ScorerKind.SP2_SIZE], graph, solvent)
    scores = (
        plqy,
        1.0 if VISIBLE_MIN_NM <= absorption <= VISIBLE_MAX_NM else 0.0,
        1.0 if VISIBLE_MIN_NM <= emission <= VISIBLE_MAX_NM else 0.0,
        min(sp2 / SP2_TARGET, 1.0),
    )
    combined = float(sum(w * m for w, m in zip(weights, scores)))
    return scores, combined


def _successes(scores) -> tuple[bool, ...]:
    # Success thresholds: PLQY probability at least 0.5, wavelengths in
    # the visible window, sp2 network at the target size.
    return (
        scores[0] >= 0.5,
        scores[1] == 1.0,
        scores[2] == 1.0,
        scores[3] >= 1.0,
    )


def tune_temperature(similarities, tau: float, config: GenerationConfig) -> float:
    """One controller step toward the target similarity.

    :param similarities: rolling window of nearest-neighbor Tanimoto
        values, most recent last; empty leaves tau unchanged.
    """
    if not similarities:
        return tau
    mean = sum(similarities) / len(similarities)
    tau = tau * (1.0 + config.eta * (mean - config.target_similarity))
    return min(max(tau, config.tau_min), config.tau_max)


def tune_weights(success_rates, floor: float = 0.05) -> tuple[float, ...]:
    """Weights proportional to failure rates, kept on the simplex with a
    floor so no property is ever abandoned.

    The proportional assignment max(floor, 1-r)/sum can dip below the
    floor after normalization, so weights that land under it are pinned
    there and the remainder is redistributed until the assignment is
    consistent.
    """
    count = len(success_rates)
    if floor * count > 1.0:
        raise GeneratorError("floor too large for the simplex")
    demand = [max(0.0, 1.0 - r) for r in success_rates]
    weights = [0.0] * count
    pinned: set[int] = set()
    while True:
        free = [k for k in range(count) if k not in pinned]
        mass = 1.0 - floor * len(pinned)
        total = sum(demand[k] for k in free)
        if not free:
            return tuple(1.0 / count for _ in range(count))
        if total == 0.0:
            for k in free:
                weights[k] = mass / len(free)
            break
        scale = mass / total
        low = [k for k in free if demand[k] * scale < floor]
        if not low:
            for k in free:
                weights[k] = demand[k] * scale
            break
        pinned.update(low)
    for k in pinned:
        weights[k] = floor
    return tuple(weights)


def _init_value_models(config: GenerationConfig) -> list[MlpModel]:
    rng = np.random.default_rng(config.seed)
    models = []
    for _ in range(N_PROPERTIES):
        models.append(
            MlpModel(
                w1=rng.normal(0.0, 0.01, (config.value_hidden, FEATURE_DIM)),
                b1=np.zeros(config.value_hidden),
                w2=rng.normal(0.0, 0.01, config.value_hidden),
                b2=0.0,
                head=Head.LINEAR,
                norm_mean=np.zeros(4),
                norm_std=np.ones(4),
                seed=config.seed,
            )
        )
    return models


def train_value_model(model, features, targets, config, rng) -> None:
    """A few epochs of SGD on the buffer; the update is kept only when it
    does not worsen the full-buffer loss."""
    before, _ = loss_and_grads(model, features, targets)
    saved = (model.w1.copy(), model.b1.copy(), model.w2.copy(), model.b2)
    n = len(features)
    for _ in range(config.value_epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.value_batch):
            batch = order[start : start + config.value_batch]
            _, grads = loss_and_grads(model, features[batch], targets[batch])
            model.w1 -= config.value_lr * grads["w1"]
            model.b1 -= config.value_lr * grads["b1"]
            model.w2 -= config.value_lr * grads["w2"]
            model.b2 -= config.value_lr * grads["b2"]
    after, _ = loss_and_grads(model, features, targets)
    if not np.isfinite(after) or after > before:
        model.w1, model.b1, model.w2, model.b2 = saved


class _Rollout:
    """Outcome of one rollout attempt."""

    __slots__ = ("graph", "route", "path_features", "dead")

    def __init__(self, graph=None, route=(), path_features=(), dead=False):
        self.graph = graph
        self.route = route
        self.path_features = path_features
        self.dead = dead


class Generator:
    """Holds the mutable run state; ``generate`` below is the entry point.

    :param library: building blocks, in file order.
    :param templates: reaction templates, in file order.
    :param scorers: reward scorers keyed by ScorerKind.
    :param solvent: solvent the rewards are evaluated in.
    :param config: run parameters.
    """

    def __init__(self, library: BlockLibrary, templates, scorers, solvent, config):
        self.config = config
        self.library = library
        self.templates = tuple(templates)
        self.templates_by_id = {t.id: t for t in self.templates}
        self.blocks = {b.id: b for b in library.blocks}
        self.scorers = dict(scorers)
        self.solvent = solvent
        self.index = CompatibilityIndex(library, self.templates)
        self.viable = set(self.index.viable_templates())
        if not self.viable:
            raise GeneratorError("no template has compatible blocks for every role")
        self.rng = random.Random(config.seed)
        self.np_rng = np.random.default_rng(config.seed + 1)
        self.value_models = _init_value_models(config)
        self.buffer = ReplayBuffer(config.buffer_capacity)
        self.tau = config.tau_init
        self.weights = tuple(1.0 / N_PROPERTIES for _ in range(N_PROPERTIES))
        self.similarity_window = collections.deque(maxlen=config.window)
        self.success_window = collections.deque(maxlen=config.window)
        self._block_value_cache: dict[str, np.ndarray] = {}

    # value estimation

    def _block_outputs(self, block_id: str) -> np.ndarray:
        cached = self._block_value_cache.get(block_id)
        if cached is not None:
            return cached
        features = node_features([self.blocks[block_id].fingerprint], self.solvent)
        outputs = np.array(
            [float(forward_batch(m, features[np.newaxis, :])[0]) for m in self.value_models]
        )
        self._block_value_cache[block_id] = outputs
        return outputs

    def _value_of_features(self, features: np.ndarray) -> float:
        return node_value(features, self.value_models, self.weights)

    # rollout phases

    def _first_choice(self):
        candidates = []
        values = []
        for template in self.templates:
            if template.id not in self.viable:
                continue
            for block_id in self.index.compatible_blocks(template.id, 0):
                candidates.append((template, block_id))
                values.append(float(np.dot(self.weights, self._block_outputs(block_id))))
        return candidates, values

    def _continuations(self, product: MolecularGraph):
        """(template, product role, block for the lowest other role)
        triples the current product could react through next."""
        out = []
        for template in self.templates:
            if template.id not in self.viable and template.arity > 1:
                continue
            for role in range(template.arity):
                if not has_match(template.roles[role], product):
                    continue
                others = [k for k in range(template.arity) if k != role]
                if any(not self.index.compatible_blocks(template.id, k) for k in others):
                    continue
                if not others:
                    out.append((template, role, None))
                    continue
                for block_id in self.index.compatible_blocks(template.id, others[0]):
                    out.append((template, role, block_id))
        return out

    def _run_rollout(self) -> _Rollout:
        config = self.config
        candidates, values = self._first_choice()
        template, first_block = candidates[sample_child(values, self.tau, self.rng)]
        member_fps = [self.blocks[first_block].fingerprint]
        path = [node_features(member_fps, self.solvent)]
        chosen: list[str] = [first_block]
        for role in range(1, template.arity):
            options = self.index.compatible_blocks(template.id, role)
            if not options:
                return _Rollout(dead=True)
            option_values = []
            for block_id in options:
                fv = node_features(member_fps + [self.blocks[block_id].fingerprint], self.solvent)
                option_values.append(self._value_of_features(fv))
            block_id = options[sample_child(option_values, self.tau, self.rng)]
            chosen.append(block_id)
            member_fps.append(self.blocks[block_id].fingerprint)
            path.append(node_features(member_fps, self.solvent))

        reactants = [self.blocks[b].graph for b in chosen]
        result = apply_reaction(template, reactants)
        if not result.products:
            return _Rollout(dead=True)
        product_index = self.rng.randrange(len(result.products))
        product = result.products[product_index]
        route = [RouteStep(template.id, tuple(chosen), product_index)]
        path.append(node_features([morgan_fingerprint(product)], self.solvent))

        for _ in range(1, config.max_steps):
            continuations = self._continuations(product)
            if not continuations:
                break
            product_fp = morgan_fingerprint(product)
            stop_value = self._value_of_features(node_features([product_fp], self.solvent))
            cont_values = [stop_value]
            for _, _, block_id in continuations:
                fps = [product_fp]
                if block_id is not None:
                    fps.append(self.blocks[block_id].fingerprint)
                cont_values.append(self._value_of_features(node_features(fps, self.solvent)))
            pick = sample_child(cont_values, self.tau, self.rng)
            if pick == 0:
                break
            template, product_role, partner = continuations[pick - 1]
            member_fps = [product_fp]
            inputs: list[str | None] = [None] * template.arity
            inputs[product_role] = PREV_MARKER
            others = [k for k in range(template.arity) if k != product_role]
            if partner is not None:
                inputs[others[0]] = partner
                member_fps.append(self.blocks[partner].fingerprint)
                path.append(node_features(member_fps, self.solvent))
            for role in others[1:]:
                options = self.index.compatible_blocks(template.id, role)
                if not options:
                    return _Rollout(dead=True)
                option_values = []
                for block_id in options:
                    fv = node_features(
                        member_fps + [self.blocks[block_id].fingerprint], self.solvent
                    )
                    option_values.append(self._value_of_features(fv))
                block_id = options[sample_child(option_values, self.tau, self.rng)]
                inputs[role] = block_id
                member_fps.append(self.blocks[block_id].fingerprint)
                path.append(node_features(member_fps, self.solvent))
            reactants = [
                product if name == PREV_MARKER else self.blocks[name].graph
                for name in inputs
            ]
            result = apply_reaction(template, reactants)
            if not result.products:
                return _Rollout(dead=True)
            product_index = self.rng.randrange(len(result.products))
            product = result.products[product_index]
            route.append(RouteStep(template.id, tuple(inputs), product_index))
            path.append(node_features([morgan_fingerprint(product)], self.solvent))

        return _Rollout(graph=product, route=tuple(route), path_features=tuple(path))

    def _train_values(self):
        if len(self.buffer) == 0:
            return
        features, targets = self.buffer.arrays()
        for k, model in enumerate(self.value_models):
            train_value_model(model, features, targets[:, k], self.config, self.np_rng)
        self._block_value_cache.clear()

    def run(self, progress=None) -> GenerationResult:
        config = self.config
        emitted: dict[str, GeneratedMolecule] = {}
        emitted_fps: list[Fingerprint] = []
        log: list[RolloutLog] = []
        dead_ends = 0
        duplicates = 0
        for rollout_idx in range(config.n_rollouts):
            if progress is not None:
                progress(rollout_idx, config.n_rollouts)
            outcome = self._run_rollout()
            if outcome.dead:
                dead_ends += 1
                log.append(
                    RolloutLog(
                        rollout=rollout_idx,
                        tau=self.tau,
                        weights=self.weights,
                        success_rates=self._rates(),
                        similarity=None,
                        status="dead",
                    )
                )
                continue

            smiles = write_canonical_smiles(outcome.graph)
            scores, combined = reward(
                outcome.graph, self.scorers, self.weights, self.solvent
            )
            fp = morgan_fingerprint(outcome.graph)
            similarity = None
            if emitted_fps:
                similarity = max(tanimoto(fp, other) for other in emitted_fps)
            if smiles in emitted:
                duplicates += 1
                status = "duplicate"
            else:
                status = "ok"
                emitted[smiles] = GeneratedMolecule(
                    smiles=smiles,
                    route=outcome.route,
                    scores=scores,
                    combined=combined,
                    weights=self.weights,
                    rollout=rollout_idx,
                )
                emitted_fps.append(fp)

            self.success_window.append(_successes(scores))
            if similarity is not None:
                self.similarity_window.append(similarity)
                self.tau = tune_temperature(self.similarity_window, self.tau, config)
            self.weights = tune_weights(self._rates(), config.weight_floor)

            for features in outcome.path_features:
                self.buffer.append(features, scores)
            if (rollout_idx + 1) % config.train_interval == 0:
                self._train_values()

            log.append(
                RolloutLog(
                    rollout=rollout_idx,
                    tau=self.tau,
                    weights=self.weights,
                    success_rates=self._rates(),
                    similarity=similarity,
                    status=status,
                )
            )

        if config.n_rollouts > 0 and not emitted:
            raise GeneratorError("every rollout dead-ended; nothing generated")
        usage: dict[str, int] = {}
        for molecule in emitted.values():
            for step in molecule.route:
                usage[step.template_id] = usage.get(step.template_id, 0) + 1
        return GenerationResult(
            molecules=tuple(emitted.values()),
            log=tuple(log),
            reaction_usage=usage,
            dead_ends=dead_ends,
            duplicates=duplicates,
        )

    def _rates(self) -> tuple[float, ...]:
        if not self.success_window:
            return tuple(0.0 for _ in range(N_PROPERTIES))
        count = len(self.success_window)
        return tuple(
            sum(1.0 for flags in self.success_window if flags[k]) / count
            for k in range(N_PROPERTIES)
        )


def generate(
    config: GenerationConfig,
    library: BlockLibrary,
    templates,
    scorers,
    solvent: SolventFeatures,
    progress=None,
) -> GenerationResult:
    """Run the full generation loop and return molecules plus run logs.

    :param config: generation parameters; config.seed fixes the run.
    :param library: ingested building blocks.
    :param templates: ingested reaction templates.
    :param scorers: reward scorers keyed by ScorerKind (all four present).
    :param solvent: solvent context for the learned scorers.
    :param progress: optional callback invoked as progress(done, total)
        before each rollout; purely informational.
    """
    missing = [kind.value for kind in PROPERTY_ORDER if kind not in scorers]
    if missing:
        raise GeneratorError(f"missing reward scorers: {missing}")
    return Generator(library, templates, scorers, solvent, config).run(progress)


def uniform_baseline(
    library: BlockLibrary,
    templates,
    n_samples: int,
    seed: int,
    scorers,
    solvent: SolventFeatures,
) -> tuple[GeneratedMolecule, ...]:
    """Single-step random template/block combinations from the same
    library, scored the same way; the no-learning comparison set."""
    rng = random.Random(seed)
    index = CompatibilityIndex(library, tuple(templates))
    templates_by_id = {t.id: t for t in templates}
    viable = sorted(index.viable_templates())
    if not viable:
        raise GeneratorError("no template has compatible blocks for every role")
    blocks = {b.id: b for b in library.blocks}
    uniform_weights = tuple(1.0 / N_PROPERTIES for _ in range(N_PROPERTIES))
    out = []
    for sample_idx in range(n_samples):
        template = templates_by_id[viable[rng.randrange(len(viable))]]
        chosen = []
        for role in range(template.arity):
            options = index.compatible_blocks(template.id, role)
            chosen.append(options[rng.randrange(len(options))])
        result = apply_reaction(template, [blocks[b].graph for b in chosen])
        if not result.products:
            continue
        product_index = rng.randrange(len(result.products))
        product = result.products[product_index]
        scores, combined = reward(product, scorers, uniform_weights, solvent)
        out.append(
            GeneratedMolecule(
                smiles=write_canonical_smiles(product),
                route=(RouteStep(template.id, tuple(chosen), product_index),),
                scores=scores,
                combined=combined,
                weights=uniform_weights,
                rollout=sample_idx,
            )
        )
    return tuple(out)


def replay_route(route, library: BlockLibrary, templates) -> str:
    """Re-run a recorded route and return the final canonical SMILES."""
    templates_by_id = {t.id: t for t in templates}
    blocks = {b.id: b for b in library.blocks}
    previous: MolecularGraph | None = None
    for step in route:
        template = templates_by_id.get(step.template_id)
        if template is None:
            raise GeneratorError(f"route names unknown template {step.template_id!r}")
        reactants = []
        for name in step.inputs:
            if name == PREV_MARKER:
                if previous is None:
                    raise GeneratorError("route uses @prev in its first step")
                reactants.append(previous)
            else:
                block = blocks.get(name)
                if block is None:
                    raise GeneratorError(f"route names unknown block {name!r}")
                reactants.append(block.graph)
        result = apply_reaction(template, reactants)
        if step.product_index >= len(result.products):
            raise GeneratorError(
                f"route step expects product {step.product_index}, "
                f"got {len(result.products)} products"
            )
        previous = result.products[step.product_index]
    if previous is None:
        raise GeneratorError("empty route")
    return write_canonical_smiles(previous)


# file output; all numbers use %.6g so reruns are byte-identical


def format_route(route) -> str:
    steps = []
    for step in route:
        steps.append(
            f"{step.template_id}({','.join(step.inputs)})->{step.product_index}"
        )
    return ";".join(steps)


def parse_route(text: str) -> tuple[RouteStep, ...]:
    steps = []
    for chunk in text.split(";"):
        head, _, index_text = chunk.rpartition("->")
        name, _, inner = head.partition("(")
        if not inner.endswith(")") or not index_text.isdigit():
            raise GeneratorError(f"bad route step {chunk!r}")
        steps.append(
            RouteStep(
                template_id=name,
                inputs=tuple(inner[:-1].split(",")),
                product_index=int(index_text),
            )
        )
    return tuple(steps)


def _fmt(value: float) -> str:
    return format(value, ".6g")


def write_molecules(molecules, path: str):
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(
            "smiles\troute\tm_plqy\tm_abs\tm_em\tm_sp2\tp\trollout\n"
        )
        for m in molecules:
            scores = "\t".join(_fmt(s) for s in m.scores)
            handle.write(
                f"{m.smiles}\t{format_route(m.route)}\t{scores}\t{_fmt(m.combined)}\t{m.rollout}\n"
            )


def write_run_log(log, path: str):
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(
            "rollout\ttau\tw_plqy\tw_abs\tw_em\tw_sp2\t"
            "r_plqy\tr_abs\tr_em\tr_sp2\tsimilarity\tstatus\n"
        )
        for entry in log:
            weights = "\t".join(_fmt(w) for w in entry.weights)
            rates = "\t".join(_fmt(r) for r in entry.success_rates)
            similarity = "" if entry.similarity is None else _fmt(entry.similarity)
            handle.write(
                f"{entry.rollout}\t{_fmt(entry.tau)}\t{weights}\t{rates}\t"
                f"{similarity}\t{entry.status}\n"
            )


def write_reaction_usage(usage: dict[str, int], path: str):
    with open(path, "w", encoding="utf-8") as handle:
        handle.write("template\tcount\n")
        for template_id in sorted(usage):
            handle.write(f"{template_id}\t{usage[template_id]}\n")
