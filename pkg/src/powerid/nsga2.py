"""Multi-objective architecture search for the residual estimator.

Classic elitist non-dominated sorting GA over a mixed genome
(layer count, widths, activation, dropout, weight decay, loss
weights). Objectives, both minimised: holdout mean absolute error of
the trained estimator, and multiply-accumulate cost per inference.
Individual evaluations are independent; each draws its own rng stream
derived from (seed, generation, index) so results do not depend on
worker count.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .core import ThermalModel, TraceDataset, split_chronological
from .cpinn import Batch, NetworkConfig, forward, mac_count, make_batch, train
from .errors import (
    DimensionMismatch,
    NonFiniteLoss,
    SingularB,
    UnevaluatedIndividual,
)

ACTIVATIONS = ("relu", "tanh", "gelu")
LAYERS_RANGE = (0, 4)
WIDTH_RANGE = (4, 128)
DROPOUT_RANGE = (0.0, 0.5)
LOG_WD_RANGE = (-6.0, -2.0)     # weight decay 1e-6 .. 1e-2
LOG_LAMBDA_RANGE = (-4.0, 1.0)  # loss weights 1e-4 .. 10


@dataclass(frozen=True)
class Genome:
    """Search-space point; validated against the fixed bounds."""

    layer_count: int
    widths: tuple[int, ...]
    activation: str
    dropout_rate: float
    weight_decay: float
    lambda_phys: float
    lambda_guide: float

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if not LAYERS_RANGE[0] <= self.layer_count <= LAYERS_RANGE[1]:
            raise DimensionMismatch(f"layer_count {self.layer_count} out of range")
        if len(self.widths) != self.layer_count:
            raise DimensionMismatch("widths length must equal layer_count")
        if any(not WIDTH_RANGE[0] <= w <= WIDTH_RANGE[1] for w in self.widths):
            raise DimensionMismatch(f"width out of {WIDTH_RANGE}: {self.widths}")
        if self.activation not in ACTIVATIONS:
            raise DimensionMismatch(f"unknown activation {self.activation!r}")
        if not DROPOUT_RANGE[0] <= self.dropout_rate <= DROPOUT_RANGE[1]:
            raise DimensionMismatch("dropout_rate out of range")
        if not 10 ** LOG_WD_RANGE[0] * 0.999 <= self.weight_decay <= 10 ** LOG_WD_RANGE[1] * 1.001:
            raise DimensionMismatch("weight_decay out of range")
        for lam in (self.lambda_phys, self.lambda_guide):
            lo, hi = 10 ** LOG_LAMBDA_RANGE[0], 10 ** LOG_LAMBDA_RANGE[1]
            if not lo * 0.999 <= lam <= hi * 1.001:
                raise DimensionMismatch("loss weight out of range")

    def to_dict(self) -> dict:
        return {
            "layer_count": self.layer_count,
            "widths": list(self.widths),
            "activation": self.activation,
            "dropout_rate": self.dropout_rate,
            "weight_decay": self.weight_decay,
            "lambda_phys": self.lambda_phys,
            "lambda_guide": self.lambda_guide,
        }

    @staticmethod
    def from_dict(doc: dict) -> "Genome":
        return Genome(
            layer_count=int(doc["layer_count"]),
            widths=tuple(doc["widths"]),
            activation=doc["activation"],
            dropout_rate=float(doc["dropout_rate"]),
            weight_decay=float(doc["weight_decay"]),
            lambda_phys=float(doc["lambda_phys"]),
            lambda_guide=float(doc["lambda_guide"]),
        )


@dataclass
class Individual:
    genome: Genome
    objectives: tuple[float, float] | None = None  # (mae_W, mac_count)
    rank: int | None = None
    crowding: float | None = None
    generation: int = 0
    index: int = 0

    def require_objectives(self) -> tuple[float, float]:
        if self.objectives is None:
            raise UnevaluatedIndividual(f"individual {self.generation}/{self.index}")
        return self.objectives


@dataclass(frozen=True)
class ParetoFront:
    """Mutually non-dominating set of evaluated individuals."""

    individuals: tuple[Individual, ...]
    generation: int = 0

    def __post_init__(self):
        for a in self.individuals:
            a.require_objectives()
        for i, a in enumerate(self.individuals):
            for b in self.individuals[i + 1 :]:
                if dominates(a, b) or dominates(b, a):
                    raise DimensionMismatch("front members must be mutually non-dominating")


def random_genome(rng: np.random.Generator) -> Genome:
    lc = int(rng.integers(LAYERS_RANGE[0], LAYERS_RANGE[1] + 1))
    widths = tuple(int(rng.integers(WIDTH_RANGE[0], WIDTH_RANGE[1] + 1)) for _ in range(lc))
    return Genome(
        layer_count=lc,
        widths=widths,
        activation=ACTIVATIONS[int(rng.integers(len(ACTIVATIONS)))],
        dropout_rate=float(rng.uniform(*DROPOUT_RANGE)),
        weight_decay=float(10 ** rng.uniform(*LOG_WD_RANGE)),
        lambda_phys=float(10 ** rng.uniform(*LOG_LAMBDA_RANGE)),
        lambda_guide=float(10 ** rng.uniform(*LOG_LAMBDA_RANGE)),
    )


# ---- dominance, sorting, crowding ----


def dominates(a: Individual, b: Individual) -> bool:
    """True when a is at least as good everywhere and better somewhere."""
    fa, fb = a.require_objectives(), b.require_objectives()
    return all(x <= y for x, y in zip(fa, fb)) and any(x < y for x, y in zip(fa, fb))


def non_dominated_sort(population: Sequence[Individual]) -> list[list[Individual]]:
    """Partition into fronts and assign 1-based ranks."""
    pop = list(population)
    dominated_by: list[list[int]] = [[] for _ in pop]
    n_dominators = [0] * len(pop)
    for i, a in enumerate(pop):
        for j in range(i + 1, len(pop)):
            b = pop[j]
            if dominates(a, b):
                dominated_by[i].append(j)
                n_dominators[j] += 1
            elif dominates(b, a):
                dominated_by[j].append(i)
                n_dominators[i] += 1
    fronts: list[list[Individual]] = []
    current = [i for i, c in enumerate(n_dominators) if c == 0]
    while current:
        for i in current:
            pop[i].rank = len(fronts) + 1
        fronts.append([pop[i] for i in current])
        nxt = []
        for i in current:
            for j in dominated_by[i]:
                n_dominators[j] -= 1
                if n_dominators[j] == 0:
                    nxt.append(j)
        current = nxt
    return fronts


def crowding_distance(front: Sequence[Individual]) -> np.ndarray:
    """Assign crowding distances within one front and return them.

    Objective extremes get infinity; interior members sum normalised
    gaps between their neighbours. A zero or non-finite objective
    range contributes nothing.
    """
    m = len(front)
    dist = np.zeros(m)
    if m == 0:
        return dist
    for k in range(2):
        vals = np.array([ind.require_objectives()[k] for ind in front])
        order = np.argsort(vals, kind="stable")
        dist[order[0]] = np.inf
        dist[order[-1]] = np.inf
        span = vals[order[-1]] - vals[order[0]]
        if m > 2 and np.isfinite(span) and span > 0:
            gaps = (vals[order[2:]] - vals[order[:-2]]) / span
            for pos in range(1, m - 1):
                if np.isfinite(dist[order[pos]]):
                    dist[order[pos]] += gaps[pos - 1]
    for ind, dv in zip(front, dist):
        ind.crowding = float(dv)
    return dist


def rank_and_crowd(population: Sequence[Individual]) -> list[list[Individual]]:
    fronts = non_dominated_sort(population)
    for front in fronts:
        crowding_distance(front)
    return fronts


def _beats(a: Individual, b: Individual) -> bool:
    if a.rank != b.rank:
        return a.rank < b.rank
    return (a.crowding or 0.0) > (b.crowding or 0.0)


def tournament(population: Sequence[Individual], rng: np.random.Generator) -> Individual:
    """Binary tournament on (rank, crowding)."""
    i, j = rng.integers(0, len(population), size=2)
    a, b = population[int(i)], population[int(j)]
    if _beats(b, a):
        return b
    return a


# ---- variation operators ----

_CONT_BOUNDS = (DROPOUT_RANGE, LOG_WD_RANGE, LOG_LAMBDA_RANGE, LOG_LAMBDA_RANGE)


def _to_cont(g: Genome) -> list[float]:
    return [g.dropout_rate, math.log10(g.weight_decay),
            math.log10(g.lambda_phys), math.log10(g.lambda_guide)]


def _from_cont(g: Genome, vec: Sequence[float], widths: tuple[int, ...],
               layer_count: int, activation: str) -> Genome:
    clip = lambda x, lo, hi: min(max(x, lo), hi)
    vec = [clip(v, lo, hi) for v, (lo, hi) in zip(vec, _CONT_BOUNDS)]
    return Genome(
        layer_count=layer_count,
        widths=widths,
        activation=activation,
        dropout_rate=vec[0],
        weight_decay=10 ** vec[1],
        lambda_phys=10 ** vec[2],
        lambda_guide=10 ** vec[3],
    )


def _sbx_pair(x1: float, x2: float, lo: float, hi: float, eta: float,
              rng: np.random.Generator) -> tuple[float, float]:
    u = rng.random()
    if u <= 0.5:
        beta = (2.0 * u) ** (1.0 / (eta + 1.0))
    else:
        beta = (1.0 / (2.0 * (1.0 - u))) ** (1.0 / (eta + 1.0))
    c1 = 0.5 * ((1.0 + beta) * x1 + (1.0 - beta) * x2)
    c2 = 0.5 * ((1.0 - beta) * x1 + (1.0 + beta) * x2)
    clip = lambda x: min(max(x, lo), hi)
    return clip(c1), clip(c2)


def _poly_mutate(x: float, lo: float, hi: float, eta: float,
                 rng: np.random.Generator) -> float:
    r = rng.random()
    if r < 0.5:
        delta = (2.0 * r) ** (1.0 / (eta + 1.0)) - 1.0
    else:
        delta = 1.0 - (2.0 * (1.0 - r)) ** (1.0 / (eta + 1.0))
    return min(max(x + delta * (hi - lo), lo), hi)


def crossover(g1: Genome, g2: Genome, rng: np.random.Generator,
              p_crossover: float = 0.9, eta: float = 15.0) -> tuple[Genome, Genome]:
    """SBX on continuous genes, uniform exchange on categorical ones.

    Widths are treated as continuous per position and rounded back to
    integers. Identical parents always yield identical offspring.
    """
    if rng.random() >= p_crossover:
        return g1, g2

    v1, v2 = _to_cont(g1), _to_cont(g2)
    for k, (lo, hi) in enumerate(_CONT_BOUNDS):
        if rng.random() < 0.5:
            v1[k], v2[k] = _sbx_pair(v1[k], v2[k], lo, hi, eta, rng)

    # width pools cover every position either parent offers
    maxlen = max(g1.layer_count, g2.layer_count)
    pool1, pool2 = [], []
    for i in range(maxlen):
        a = g1.widths[i] if i < g1.layer_count else None
        b = g2.widths[i] if i < g2.layer_count else None
        if a is not None and b is not None:
            c1, c2 = _sbx_pair(float(a), float(b), *WIDTH_RANGE, eta, rng)
            pool1.append(int(round(c1)))
            pool2.append(int(round(c2)))
        else:
            keep = a if a is not None else b
            pool1.append(int(keep))
            pool2.append(int(keep))

    lc1, lc2 = g1.layer_count, g2.layer_count
    if rng.random() < 0.5:
        lc1, lc2 = lc2, lc1
    act1, act2 = g1.activation, g2.activation
    if rng.random() < 0.5:
        act1, act2 = act2, act1

    def widths_for(pool: list[int], lc: int) -> tuple[int, ...]:
        w = list(pool[:lc])
        while len(w) < lc:
            w.append(int(rng.integers(WIDTH_RANGE[0], WIDTH_RANGE[1] + 1)))
        return tuple(w)

    child1 = _from_cont(g1, v1, widths_for(pool1, lc1), lc1, act1)
    child2 = _from_cont(g2, v2, widths_for(pool2, lc2), lc2, act2)
    return child1, child2


def mutate(g: Genome, rng: np.random.Generator, eta: float = 20.0,
           prob: float | None = None) -> Genome:
    """Polynomial mutation of continuous genes, resampling of
    categorical ones, each gene hit with probability 1/genome_length."""
    length = 6 + g.layer_count
    p = (1.0 / length) if prob is None else prob
    vec = _to_cont(g)
    for k, (lo, hi) in enumerate(_CONT_BOUNDS):
        if rng.random() < p:
            vec[k] = _poly_mutate(vec[k], lo, hi, eta, rng)
    widths = list(g.widths)
    for i in range(len(widths)):
        if rng.random() < p:
            widths[i] = int(round(_poly_mutate(float(widths[i]), *WIDTH_RANGE, eta, rng)))
    lc = g.layer_count
    if rng.random() < p:
        lc = int(rng.integers(LAYERS_RANGE[0], LAYERS_RANGE[1] + 1))
        while len(widths) < lc:
            widths.append(int(rng.integers(WIDTH_RANGE[0], WIDTH_RANGE[1] + 1)))
        widths = widths[:lc]
    act = g.activation
    if rng.random() < p:
        act = ACTIVATIONS[int(rng.integers(len(ACTIVATIONS)))]
    return _from_cont(g, vec, tuple(widths), lc, act)


# ---- evaluation ----


@dataclass(frozen=True)
class SearchSettings:
    """Search-level knobs that are not part of the genome."""

    budget_epochs: int = 8
    learning_rate: float = 1e-2
    batch_size: int = 64
    patience: int = 1_000_000  # effectively disables early stop at small budgets
    holdout_fraction: float = 0.25
    p_crossover: float = 0.9
    eta_crossover: float = 15.0
    eta_mutation: float = 20.0


def genome_to_config(genome: Genome, n_units: int, settings: SearchSettings,
                     budget_epochs: int | None = None) -> NetworkConfig:
    return NetworkConfig(
        n_units=n_units,
        hidden_widths=genome.widths,
        activation=genome.activation,
        dropout_rate=genome.dropout_rate,
        weight_decay=genome.weight_decay,
        lambda_phys=genome.lambda_phys,
        lambda_guide=genome.lambda_guide,
        learning_rate=settings.learning_rate,
        batch_size=settings.batch_size,
        max_epochs=settings.budget_epochs if budget_epochs is None else budget_epochs,
        patience=settings.patience,
    )


def evaluate_genome(genome: Genome, train_part: TraceDataset, holdout: Batch,
                    init_model: ThermalModel, settings: SearchSettings,
                    eval_seed: int) -> tuple[float, float]:
    """(holdout MAE, MAC count); training failures yield the infinite
    sentinel so the individual is dominated instead of fatal."""
    config = genome_to_config(genome, init_model.n_units, settings)
    f2 = float(mac_count(config))
    try:
        model = train(config, init_model, train_part, seed=eval_seed)
        pred, _ = forward(model, holdout.t_prev, holdout.t_curr, holdout.p_est)
        f1 = float(np.mean(np.abs(pred - holdout.p_true)))
    except (NonFiniteLoss, SingularB, np.linalg.LinAlgError, FloatingPointError):
        return (math.inf, math.inf)
    if not np.isfinite(f1):
        return (math.inf, math.inf)
    return (f1, f2)


def derive_seed(seed: int, generation: int, index: int, salt: int = 1) -> int:
    """Stable per-individual seed, independent of evaluation order."""
    ss = np.random.SeedSequence([int(seed), int(generation), int(index), int(salt)])
    return int(ss.generate_state(1, np.uint64)[0] & 0x7FFFFFFFFFFFFFFF)


_WORKER_CTX: dict = {}


def _init_worker(train_part, holdout, init_model, settings):
    _WORKER_CTX["args"] = (train_part, holdout, init_model, settings)


def _eval_task(task: tuple[Genome, int]) -> tuple[float, float]:
    genome, eval_seed = task
    train_part, holdout, init_model, settings = _WORKER_CTX["args"]
    return evaluate_genome(genome, train_part, holdout, init_model, settings, eval_seed)


# ---- generational loop ----


def make_offspring(population: Sequence[Individual], rng: np.random.Generator,
                   settings: SearchSettings, count: int) -> list[Genome]:
    """Tournament selection, crossover and mutation until count genomes."""
    out: list[Genome] = []
    while len(out) < count:
        p1 = tournament(population, rng)
        p2 = tournament(population, rng)
        c1, c2 = crossover(p1.genome, p2.genome, rng,
                           settings.p_crossover, settings.eta_crossover)
        out.append(mutate(c1, rng, settings.eta_mutation))
        if len(out) < count:
            out.append(mutate(c2, rng, settings.eta_mutation))
    return out


def survival(combined: Sequence[Individual], pop_size: int) -> list[Individual]:
    """Elitist selection: whole fronts first, crowding breaks the tie."""
    fronts = rank_and_crowd(combined)
    chosen: list[Individual] = []
    for front in fronts:
        if len(chosen) + len(front) <= pop_size:
            chosen.extend(front)
        else:
            rest = sorted(front, key=lambda ind: -(ind.crowding or 0.0))
            chosen.extend(rest[: pop_size - len(chosen)])
            break
    return chosen


def step_generation(population: list[Individual], rng: np.random.Generator,
                    evaluate_fn: Callable[[list[Genome], int], list[tuple[float, float]]],
                    generation: int, settings: SearchSettings) -> list[Individual]:
    """One elitist generation: variation, evaluation, mu+lambda survival."""
    rank_and_crowd(population)
    genomes = make_offspring(population, rng, settings, len(population))
    objectives = evaluate_fn(genomes, generation)
    offspring = [
        Individual(genome=g, objectives=obj, generation=generation, index=i)
        for i, (g, obj) in enumerate(zip(genomes, objectives))
    ]
    return survival(list(population) + offspring, len(population))


def hypervolume_2d(points: Sequence[tuple[float, float]],
                   ref: tuple[float, float]) -> float:
    """Dominated area between minimisation points and a reference corner."""
    pts = sorted((p for p in points
                  if np.isfinite(p[0]) and np.isfinite(p[1])
                  and p[0] < ref[0] and p[1] < ref[1]))
    hv = 0.0
    ceiling = ref[1]
    for f1, f2 in pts:
        if f2 < ceiling:
            hv += (ref[0] - f1) * (ceiling - f2)
            ceiling = f2
    return hv


@dataclass
class SearchResult:
    front: ParetoFront
    final_population: list[Individual]
    archive: list[list[dict]]  # per generation, one record per individual
    seed: int
    settings: SearchSettings

    def archive_fronts(self) -> list[list[tuple[float, float]]]:
        """Rank-1 objective pairs per archived generation."""
        out = []
        for gen in self.archive:
            inds = [Individual(genome=Genome.from_dict(r["genome"]),
                               objectives=(r["f1_mae_W"], r["f2_macs"]))
                    for r in gen]
            fronts = non_dominated_sort(inds)
            out.append([ind.objectives for ind in fronts[0]] if fronts else [])
        return out


def run_search(dataset: TraceDataset, init_model: ThermalModel,
               pop_size: int = 20, generations: int = 30, seed: int = 0,
               settings: SearchSettings = SearchSettings(), jobs: int = 1
               ) -> SearchResult:
    """Full search over a prepared dataset (estimates and truth filled).

    The holdout split is fixed up front so every individual is scored
    on identical data. The archive records every generation's
    population for later plotting; the returned front is the rank-1
    set of the final population.
    """
    if pop_size < 2:
        raise DimensionMismatch("pop_size must be >= 2")
    if generations < 0:
        raise DimensionMismatch("generations must be >= 0")
    train_part, holdout_part = split_chronological(dataset, 1.0 - settings.holdout_fraction)
    holdout, _ = make_batch(holdout_part, init_model.ambient_K, require_truth=True)

    def evaluate_many(genomes: list[Genome], generation: int) -> list[tuple[float, float]]:
        tasks = [(g, derive_seed(seed, generation, i)) for i, g in enumerate(genomes)]
        if jobs > 1:
            with ProcessPoolExecutor(
                max_workers=jobs, initializer=_init_worker,
                initargs=(train_part, holdout, init_model, settings),
            ) as pool:
                return list(pool.map(_eval_task, tasks))
        return [evaluate_genome(g, train_part, holdout, init_model, settings, s)
                for g, s in tasks]

    rng = np.random.default_rng(seed)
    genomes = [random_genome(rng) for _ in range(pop_size)]
    population = [
        Individual(genome=g, objectives=obj, generation=0, index=i)
        for i, (g, obj) in enumerate(zip(genomes, evaluate_many(genomes, 0)))
    ]
    archive = [_snapshot(population)]
    for gen in range(1, generations + 1):
        population = step_generation(population, rng, evaluate_many, gen, settings)
        archive.append(_snapshot(population))
    fronts = rank_and_crowd(population)
    front = ParetoFront(individuals=tuple(fronts[0]), generation=generations)
    return SearchResult(front=front, final_population=population, archive=archive,
                        seed=seed, settings=settings)


def _snapshot(population: Sequence[Individual]) -> list[dict]:
    return [
        {
            "genome": ind.genome.to_dict(),
            "f1_mae_W": ind.require_objectives()[0],
            "f2_macs": ind.require_objectives()[1],
            "generation": ind.generation,
            "index": ind.index,
        }
        for ind in population
    ]
