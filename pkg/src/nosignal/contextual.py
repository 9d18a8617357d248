"""Finite hidden-variable models of EPRB experiments.

Three model families are covered:

* ``LrhvmModel``: deterministic local realistic outcomes A_x(lam), B_y(lam).
* ``ShvmModel``: stochastic local outcomes with factorised probabilities.
* ``DiscreteContextualModel``: pair variables (lam1, lam2) plus instrument
  variables lamX ~ P_x, lamY ~ P_y; responses A_x(lam1, lamX) and
  B_y(lam2, lamY) take values in {-1, 0, +1}, 0 meaning "no detection".

For the contextual family the singles distributions never depend on the
distant setting, while marginals computed on the post-selected set
{A != 0 and B != 0} can. ``witness_model`` is the smallest example where
that dependence is maximal.

Exact quantities are obtained by enumerating the full product space; the
enumerators refuse spaces larger than ``ENUMERATION_CAP`` terms.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Hashable, Mapping

import numpy as np

ENUMERATION_CAP = 10**7
PROB_TOL = 1e-12
OUTCOMES3 = (-1, 0, 1)


class EnumerationTooLarge(ValueError):
    pass


class EmptySelectionError(ValueError):
    """The post-selected set has probability zero."""


def _prob_vector(p, name: str, size: int | None = None) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if size is not None and p.shape[-1] != size:
        raise ValueError(f"{name} has {p.shape[-1]} entries, expected {size}")
    if np.any(p < 0):
        raise ValueError(f"{name} has negative entries")
    if abs(p.sum() - 1.0) > PROB_TOL:
        raise ValueError(f"{name} sums to {p.sum()!r}, not 1")
    p.flags.writeable = False
    return p


def _response(table, shape: tuple[int, ...], name: str, allow_zero: bool = True) -> np.ndarray:
    r = np.asarray(table, dtype=np.int8).reshape(shape)
    allowed = (-1, 0, 1) if allow_zero else (-1, 1)
    if not np.all(np.isin(r, allowed)):
        raise ValueError(f"{name} must take values in {allowed}")
    r.flags.writeable = False
    return r


def _lookup(table: Mapping, key, what: str):
    try:
        return table[key]
    except KeyError:
        raise KeyError(f"setting {key!r} is not registered for {what}") from None


@dataclass(frozen=True, eq=False)
class DiscreteContextualModel:
    """Contextual model over Lambda1 x Lambda2 x LambdaX x LambdaY.

    ``p_pair`` is a (n1, n2) table. ``p_x[x]`` / ``p_y[y]`` are vectors over
    LambdaX / LambdaY for each registered setting. ``response_A[x]`` has
    shape (n1, nX) and ``response_B[y]`` shape (n2, nY).
    """

    p_pair: np.ndarray
    p_x: Mapping[Hashable, np.ndarray]
    p_y: Mapping[Hashable, np.ndarray]
    response_A: Mapping[Hashable, np.ndarray]
    response_B: Mapping[Hashable, np.ndarray]

    def __post_init__(self):
        p_pair = np.asarray(self.p_pair, dtype=float)
        if p_pair.ndim != 2:
            raise ValueError("p_pair must be a 2-d table")
        p_pair = _prob_vector(p_pair, "p_pair")
        n1, n2 = p_pair.shape
        if not self.p_x or not self.p_y:
            raise ValueError("at least one setting per side is required")
        p_x = {k: _prob_vector(v, f"p_x[{k!r}]") for k, v in self.p_x.items()}
        p_y = {k: _prob_vector(v, f"p_y[{k!r}]") for k, v in self.p_y.items()}
        nx = {v.size for v in p_x.values()}
        ny = {v.size for v in p_y.values()}
        if len(nx) != 1 or len(ny) != 1:
            raise ValueError("all p_x (p_y) tables must share one cardinality")
        nx, ny = nx.pop(), ny.pop()
        if set(self.response_A) != set(p_x) or set(self.response_B) != set(p_y):
            raise ValueError("response tables and probability tables must cover the same settings")
        ra = {k: _response(v, (n1, nx), f"response_A[{k!r}]") for k, v in self.response_A.items()}
        rb = {k: _response(v, (n2, ny), f"response_B[{k!r}]") for k, v in self.response_B.items()}
        for name, value in (("p_pair", p_pair), ("p_x", p_x), ("p_y", p_y),
                            ("response_A", ra), ("response_B", rb)):
            object.__setattr__(self, name, value)

    @property
    def lambda1_size(self) -> int:
        return self.p_pair.shape[0]

    @property
    def lambda2_size(self) -> int:
        return self.p_pair.shape[1]

    @property
    def lambdaX_size(self) -> int:
        return next(iter(self.p_x.values())).size

    @property
    def lambdaY_size(self) -> int:
        return next(iter(self.p_y.values())).size

    @property
    def alice_settings(self) -> list:
        return list(self.p_x)

    @property
    def bob_settings(self) -> list:
        return list(self.p_y)

    def n_terms(self) -> int:
        return self.lambda1_size * self.lambda2_size * self.lambdaX_size * self.lambdaY_size

    def _tables(self, x, y, cap: int):
        if self.n_terms() > cap:
            raise EnumerationTooLarge(
                f"{self.n_terms()} terms exceed the enumeration cap {cap}; use sampling")
        px = _lookup(self.p_x, x, "Alice")
        py = _lookup(self.p_y, y, "Bob")
        # weight[l1, l2, lx, ly] and broadcast responses on the same axes
        w = self.p_pair[:, :, None, None] * px[None, None, :, None] * py[None, None, None, :]
        a = self.response_A[x][:, None, :, None]
        b = self.response_B[y][None, :, None, :]
        return w, a, b


def expectation_contextual(model: DiscreteContextualModel, x, y,
                           cap: int = ENUMERATION_CAP) -> float:
    """E(AB|x,y) summed over the full product space (zeros included)."""
    w, a, b = model._tables(x, y, cap)
    return float(np.sum(a * b * w))


def singles_distribution(model: DiscreteContextualModel, own_setting, distant_setting,
                         side: str = "A", cap: int = ENUMERATION_CAP) -> dict[int, float]:
    """P(a|x) (side "A") or P(b|y) (side "B") over {-1, 0, +1}.

    The distant setting's instrument variables are enumerated too, so the
    result demonstrates rather than assumes that they marginalise out.
    """
    if side == "A":
        w, r, _ = model._tables(own_setting, distant_setting, cap)
    elif side == "B":
        w, _, r = model._tables(distant_setting, own_setting, cap)
    else:
        raise ValueError(f"side must be 'A' or 'B', got {side!r}")
    r = np.broadcast_to(r, w.shape)
    return {o: float(w[r == o].sum()) for o in OUTCOMES3}


def expectation_singles(model: DiscreteContextualModel, own_setting, distant_setting,
                        side: str = "A") -> float:
    dist = singles_distribution(model, own_setting, distant_setting, side)
    return dist[1] - dist[-1]


def postselected_marginals(model: DiscreteContextualModel, x, y,
                           cap: int = ENUMERATION_CAP):
    """Marginals of A and B conditioned on both being non-zero.

    Returns ``(p_a, p_b, renorm)`` where ``renorm`` is the probability of the
    selected set.
    """
    w, a, b = model._tables(x, y, cap)
    a = np.broadcast_to(a, w.shape)
    b = np.broadcast_to(b, w.shape)
    sel = (a != 0) & (b != 0)
    renorm = float(w[sel].sum())
    if renorm <= 0.0:
        raise EmptySelectionError(f"no weight on the both-detected set for ({x!r}, {y!r})")
    p_a = {o: float(w[sel & (a == o)].sum()) / renorm for o in (-1, 1)}
    p_b = {o: float(w[sel & (b == o)].sum()) / renorm for o in (-1, 1)}
    return p_a, p_b, renorm


def expectation_postselected(model: DiscreteContextualModel, x, y, side: str = "A") -> float:
    p_a, p_b, _ = postselected_marginals(model, x, y)
    p = p_a if side == "A" else p_b
    return p[1] - p[-1]


def postselected_joint(model: DiscreteContextualModel, x, y) -> dict[tuple[int, int], float]:
    """P(a, b | x, y, a != 0, b != 0)."""
    w, a, b = model._tables(x, y, ENUMERATION_CAP)
    a = np.broadcast_to(a, w.shape)
    b = np.broadcast_to(b, w.shape)
    sel = (a != 0) & (b != 0)
    renorm = float(w[sel].sum())
    if renorm <= 0.0:
        raise EmptySelectionError(f"no weight on the both-detected set for ({x!r}, {y!r})")
    return {(i, j): float(w[(a == i) & (b == j)].sum()) / renorm
            for i in (-1, 1) for j in (-1, 1)}


def sample_contextual(model: DiscreteContextualModel, x, y, n: int, seed: int) -> np.ndarray:
    """Draw ``n`` i.i.d. outcome pairs (a, b) in {-1,0,+1}^2.

    Three independent substreams are derived from ``seed``: one for the
    pair variables, one for Alice's instrument, one for Bob's. Alice's
    column therefore never depends on ``y`` (and Bob's never on ``x``).
    """
    if n < 0:
        raise ValueError("n must be non-negative")
    px = _lookup(model.p_x, x, "Alice")
    py = _lookup(model.p_y, y, "Bob")
    out = np.zeros((n, 2), dtype=np.int8)
    if n == 0:
        return out
    src, alice, bob = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3))
    flat = src.choice(model.p_pair.size, size=n, p=model.p_pair.ravel())
    l1, l2 = np.divmod(flat, model.lambda2_size)
    lx = alice.choice(px.size, size=n, p=px)
    ly = bob.choice(py.size, size=n, p=py)
    out[:, 0] = model.response_A[x][l1, lx]
    out[:, 1] = model.response_B[y][l2, ly]
    return out


def witness_model() -> DiscreteContextualModel:
    """Pairs (1,1) or (2,2) with probability 1/2 each; no instrument noise.

    Alice: x gives +1 for lam1=1 else -1; x' gives the opposite.
    Bob: y gives +1 for lam2=1 else 0 (no click); y' gives -1 for lam2=2
    else 0. Singles are setting independent, yet after post-selection
    P(a=+1|x,y) = 1 and P(a=+1|x,y') = 0.
    """
    return DiscreteContextualModel(
        p_pair=np.array([[0.5, 0.0], [0.0, 0.5]]),
        p_x={"x": [1.0], "x'": [1.0]},
        p_y={"y": [1.0], "y'": [1.0]},
        response_A={"x": [[1], [-1]], "x'": [[-1], [1]]},
        response_B={"y": [[1], [0]], "y'": [[0], [-1]]},
    )


def random_contextual_model(rng: np.random.Generator, n1: int = 4, n2: int = 4,
                            nx: int = 2, ny: int = 2, settings_A=("x", "x'"),
                            settings_B=("y", "y'"), zero_prob: float = 0.2
                            ) -> DiscreteContextualModel:
    def responses(shape):
        r = rng.choice([-1, 1], size=shape)
        r[rng.random(shape) < zero_prob] = 0
        return r

    pair = rng.random((n1, n2))
    return DiscreteContextualModel(
        p_pair=pair / pair.sum(),
        p_x={s: (v := rng.random(nx)) / v.sum() for s in settings_A},
        p_y={s: (v := rng.random(ny)) / v.sum() for s in settings_B},
        response_A={s: responses((n1, nx)) for s in settings_A},
        response_B={s: responses((n2, ny)) for s in settings_B},
    )


@dataclass(frozen=True, eq=False)
class LrhvmModel:
    """Deterministic local model: lam ~ p_lambda, A_x(lam), B_y(lam) in {-1,+1}."""

    p_lambda: np.ndarray
    response_A: Mapping[Hashable, np.ndarray]
    response_B: Mapping[Hashable, np.ndarray]

    def __post_init__(self):
        p = _prob_vector(self.p_lambda, "p_lambda")
        n = p.size
        object.__setattr__(self, "p_lambda", p)
        object.__setattr__(self, "response_A", {
            k: _response(v, (n,), f"response_A[{k!r}]", allow_zero=False)
            for k, v in self.response_A.items()})
        object.__setattr__(self, "response_B", {
            k: _response(v, (n,), f"response_B[{k!r}]", allow_zero=False)
            for k, v in self.response_B.items()})

    @property
    def lambda_size(self) -> int:
        return self.p_lambda.size

    def as_contextual(self) -> DiscreteContextualModel:
        """Embed with lam1 = lam2 = lam and trivial instrument spaces."""
        return DiscreteContextualModel(
            p_pair=np.diag(self.p_lambda),
            p_x={k: [1.0] for k in self.response_A},
            p_y={k: [1.0] for k in self.response_B},
            response_A={k: v[:, None] for k, v in self.response_A.items()},
            response_B={k: v[:, None] for k, v in self.response_B.items()},
        )


def expectation_lrhvm(model: LrhvmModel, x, y) -> float:
    a = _lookup(model.response_A, x, "Alice")
    b = _lookup(model.response_B, y, "Bob")
    return float(np.sum(model.p_lambda * a * b))


def random_lrhvm(rng: np.random.Generator, n: int = 6, settings_A=("x", "x'"),
                 settings_B=("y", "y'")) -> LrhvmModel:
    p = rng.random(n)
    return LrhvmModel(
        p_lambda=p / p.sum(),
        response_A={s: rng.choice([-1, 1], size=n) for s in settings_A},
        response_B={s: rng.choice([-1, 1], size=n) for s in settings_B},
    )


@dataclass(frozen=True, eq=False)
class ShvmModel:
    """Stochastic local model. ``prob_A[x][lam]`` is P(a=+1 | x, lam);
    P(a=-1 | x, lam) is its complement, so each conditional sums to one."""

    p_lambda: np.ndarray
    prob_A: Mapping[Hashable, np.ndarray]
    prob_B: Mapping[Hashable, np.ndarray]

    def __post_init__(self):
        p = _prob_vector(self.p_lambda, "p_lambda")
        n = p.size

        def check(table, name):
            out = {}
            for k, v in table.items():
                v = np.asarray(v, dtype=float).reshape(n)
                if np.any(v < 0) or np.any(v > 1):
                    raise ValueError(f"{name}[{k!r}] must hold probabilities")
                v.flags.writeable = False
                out[k] = v
            return out

        object.__setattr__(self, "p_lambda", p)
        object.__setattr__(self, "prob_A", check(self.prob_A, "prob_A"))
        object.__setattr__(self, "prob_B", check(self.prob_B, "prob_B"))

    @property
    def lambda_size(self) -> int:
        return self.p_lambda.size


def _cond(p_plus: np.ndarray, outcome: int) -> np.ndarray:
    if outcome == 1:
        return p_plus
    if outcome == -1:
        return 1.0 - p_plus
    raise ValueError(f"outcome must be -1 or +1, got {outcome}")


def probability_shvm(model: ShvmModel, a: int, b: int, x, y) -> float:
    pa = _cond(_lookup(model.prob_A, x, "Alice"), a)
    pb = _cond(_lookup(model.prob_B, y, "Bob"), b)
    return float(np.sum(model.p_lambda * pa * pb))


def expectation_shvm(model: ShvmModel, x, y) -> float:
    return sum(a * b * probability_shvm(model, a, b, x, y) for a in (-1, 1) for b in (-1, 1))


def random_shvm(rng: np.random.Generator, n: int = 5, settings_A=("x", "x'"),
                settings_B=("y", "y'")) -> ShvmModel:
    p = rng.random(n)
    return ShvmModel(
        p_lambda=p / p.sum(),
        prob_A={s: rng.random(n) for s in settings_A},
        prob_B={s: rng.random(n) for s in settings_B},
    )


def chsh_value(expectation, model, x, xp, y, yp) -> float:
    """E(x,y) + E(x,y') + E(x',y) - E(x',y') for any expectation function."""
    return (expectation(model, x, y) + expectation(model, x, yp)
            + expectation(model, xp, y) - expectation(model, xp, yp))


# -- fixture format -------------------------------------------------------
#
#   # nosignal-model v1
#   sizes lambda1=2 lambda2=2 lambdaX=1 lambdaY=1
#   p_pair 0.5 0 0 0.5            (row-major over lambda1, lambda2)
#   p_x <setting> <nX numbers>
#   p_y <setting> <nY numbers>
#   response_A <setting> <n1*nX integers>   (row-major over lambda1, lambdaX)
#   response_B <setting> <n2*nY integers>


class ModelFormatError(ValueError):
    pass


def parse_model(text: str) -> DiscreteContextualModel:
    sizes = None
    p_pair = None
    tables: dict[str, dict] = {"p_x": {}, "p_y": {}, "response_A": {}, "response_B": {}}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, *rest = line.split()
        try:
            if key == "sizes":
                kv = dict(item.split("=", 1) for item in rest)
                sizes = tuple(int(kv[k]) for k in ("lambda1", "lambda2", "lambdaX", "lambdaY"))
            elif key == "p_pair":
                if sizes is None:
                    raise ModelFormatError("'sizes' must come first")
                p_pair = np.array([float(v) for v in rest]).reshape(sizes[0], sizes[1])
            elif key in tables:
                label, *nums = rest
                conv = float if key.startswith("p_") else int
                tables[key][label] = np.array([conv(v) for v in nums])
            else:
                raise ModelFormatError(f"unknown keyword {key!r}")
        except (ValueError, KeyError) as exc:
            raise ModelFormatError(f"line {lineno}: {exc}") from None
    if sizes is None or p_pair is None:
        raise ModelFormatError("missing 'sizes' or 'p_pair'")
    n1, n2, nx, ny = sizes
    try:
        return DiscreteContextualModel(
            p_pair=p_pair,
            p_x=tables["p_x"], p_y=tables["p_y"],
            response_A={k: v.reshape(n1, nx) for k, v in tables["response_A"].items()},
            response_B={k: v.reshape(n2, ny) for k, v in tables["response_B"].items()},
        )
    except ValueError as exc:
        raise ModelFormatError(str(exc)) from None


def format_model(model: DiscreteContextualModel) -> str:
    def nums(arr):
        return " ".join(repr(float(v)) if arr.dtype.kind == "f" else str(int(v))
                        for v in np.ravel(arr))

    lines = [
        "# nosignal-model v1",
        f"sizes lambda1={model.lambda1_size} lambda2={model.lambda2_size} "
        f"lambdaX={model.lambdaX_size} lambdaY={model.lambdaY_size}",
        f"p_pair {nums(model.p_pair)}",
    ]
    lines += [f"p_x {k} {nums(v)}" for k, v in model.p_x.items()]
    lines += [f"p_y {k} {nums(v)}" for k, v in model.p_y.items()]
    lines += [f"response_A {k} {nums(v)}" for k, v in model.response_A.items()]
    lines += [f"response_B {k} {nums(v)}" for k, v in model.response_B.items()]
    return "\n".join(lines) + "\n"


def load_model(path) -> DiscreteContextualModel:
    with open(path, encoding="utf-8") as fh:
        return parse_model(fh.read())
