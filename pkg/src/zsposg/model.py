"""Game tuple for finite-horizon two-player zero-sum POSGs.

A model holds the joint kernel ``trans[s, a1, a2, s2, z1, z2]``, the reward
``reward[s, a1, a2]`` paid to player 1, the horizon, the discount and the
initial state distribution.  Models are validated on construction and the
arrays are frozen.
"""
from __future__ import annotations

import json
import weakref
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class NumericConfig:
    validate_tol: float = 1e-9
    identity_tol: float = 1e-12
    prune_eps: float = 1e-12
    reject_tol: float = 1e-6
    lp_tol: float = 1e-9
    compare_tol: float = 1e-7


NUMERIC = NumericConfig()


class ModelError(ValueError):
    """Raised for malformed or inconsistent model data."""


class _Unreachable:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "UNREACHABLE"

    def __bool__(self) -> bool:
        return False


UNREACHABLE = _Unreachable()


@dataclass(frozen=True, eq=False)
class PosgModel:
    states: tuple[str, ...]
    actions1: tuple[str, ...]
    actions2: tuple[str, ...]
    obs1: tuple[str, ...]
    obs2: tuple[str, ...]
    trans: np.ndarray
    reward: np.ndarray
    horizon: int
    discount: float
    b0: np.ndarray
    name: str = "model"
    r_min: float = field(init=False)
    r_max: float = field(init=False)

    def __post_init__(self):
        S, A1, A2 = len(self.states), len(self.actions1), len(self.actions2)
        Z1, Z2 = len(self.obs1), len(self.obs2)
        trans = np.array(self.trans, dtype=float)
        reward = np.array(self.reward, dtype=float)
        b0 = np.array(self.b0, dtype=float)
        if min(S, A1, A2, Z1, Z2) < 1:
            raise ModelError("every index set needs at least one element")
        if trans.shape != (S, A1, A2, S, Z1, Z2):
            raise ModelError(f"trans has shape {trans.shape}, expected {(S, A1, A2, S, Z1, Z2)}")
        if reward.shape != (S, A1, A2):
            raise ModelError(f"reward has shape {reward.shape}, expected {(S, A1, A2)}")
        if b0.shape != (S,):
            raise ModelError(f"b0 has shape {b0.shape}, expected {(S,)}")
        if int(self.horizon) < 1:
            raise ModelError("horizon must be a positive integer")
        if not 0.0 <= float(self.discount) <= 1.0:
            raise ModelError("discount must lie in [0, 1]")
        if not np.all(np.isfinite(reward)):
            raise ModelError("rewards must be finite")
        tol = NUMERIC.validate_tol
        if np.any(trans < -tol) or np.any(trans > 1 + tol):
            raise ModelError("transition probabilities must lie in [0, 1]")
        if np.any(b0 < -tol) or np.any(b0 > 1 + tol):
            raise ModelError("start probabilities must lie in [0, 1]")
        sums = trans.reshape(S, A1, A2, -1).sum(axis=-1)
        bad = np.argwhere(np.abs(sums - 1.0) > tol)
        if bad.size:
            s, a1, a2 = bad[0]
            raise ModelError(
                f"transition row (s={s}, a1={a1}, a2={a2}) sums to {sums[s, a1, a2]:.12g}")
        if abs(b0.sum() - 1.0) > tol:
            raise ModelError(f"start distribution sums to {b0.sum():.12g}")
        for arr in (trans, reward, b0):
            arr.flags.writeable = False
        object.__setattr__(self, "trans", trans)
        object.__setattr__(self, "reward", reward)
        object.__setattr__(self, "b0", b0)
        object.__setattr__(self, "horizon", int(self.horizon))
        object.__setattr__(self, "discount", float(self.discount))
        for name in ("states", "actions1", "actions2", "obs1", "obs2"):
            object.__setattr__(self, name, tuple(str(x) for x in getattr(self, name)))
        object.__setattr__(self, "r_min", float(reward.min()))
        object.__setattr__(self, "r_max", float(reward.max()))

    @property
    def n_states(self) -> int:
        return len(self.states)

    def n_actions(self, player: int) -> int:
        return len(self.actions1 if player == 1 else self.actions2)

    def n_obs(self, player: int) -> int:
        return len(self.obs1 if player == 1 else self.obs2)

    def horizon_weight(self, tau: int) -> float:
        """Sum of discount weights over the remaining steps from ``tau``."""
        return horizon_weight(self.horizon, tau, self.discount)

    def with_horizon(self, horizon: int) -> "PosgModel":
        return PosgModel(self.states, self.actions1, self.actions2, self.obs1, self.obs2,
                         self.trans, self.reward, horizon, self.discount, self.b0, self.name)

    def to_json(self) -> dict:
        S, A1, A2 = self.reward.shape
        transitions = [
            {"s": int(s), "a1": int(a1), "a2": int(a2), "s2": int(s2),
             "z1": int(z1), "z2": int(z2), "p": float(self.trans[s, a1, a2, s2, z1, z2])}
            for s, a1, a2, s2, z1, z2 in np.argwhere(self.trans > 0)
        ]
        rewards = [
            {"s": int(s), "a1": int(a1), "a2": int(a2), "r": float(self.reward[s, a1, a2])}
            for s, a1, a2 in np.argwhere(self.reward != 0)
        ]
        return {
            "states": list(self.states),
            "actions": [list(self.actions1), list(self.actions2)],
            "observations": [list(self.obs1), list(self.obs2)],
            "start": [float(x) for x in self.b0],
            "horizon": self.horizon,
            "discount": self.discount,
            "transitions": transitions,
            "rewards": rewards,
        }


def horizon_weight(horizon: int, tau: int, discount: float) -> float:
    n = horizon - tau
    if n <= 0:
        return 0.0
    if discount == 1.0:
        return float(n)
    return (1.0 - discount ** n) / (1.0 - discount)


def matching_pennies() -> PosgModel:
    # s_i -> s_h / s_t remembers player 1's move; player 2 answers blind at t=1
    S, A, Z = 3, 2, 1
    trans = np.zeros((S, A, A, S, Z, Z))
    for s in range(S):
        for a2 in range(A):
            trans[s, 0, a2, 1, 0, 0] = 1.0
            trans[s, 1, a2, 2, 0, 0] = 1.0
    reward = np.zeros((S, A, A))
    reward[1, :, 0] = 2.0
    reward[1, :, 1] = -1.0
    reward[2, :, 0] = -1.0
    reward[2, :, 1] = 1.0
    return PosgModel(("s_i", "s_h", "s_t"), ("a_h", "a_t"), ("a_h", "a_t"),
                     ("z_n",), ("z_n",), trans, reward, 2, 1.0,
                     np.array([1.0, 0.0, 0.0]), name="matching_pennies")


def build_random_model(seed: int, n_states: int, n_actions: int, n_obs: int,
                       horizon: int) -> PosgModel:
    if min(n_states, n_actions, n_obs, horizon) < 1:
        raise ModelError("sizes must be at least 1")
    rng = np.random.default_rng(seed)
    S, A, Z = n_states, n_actions, n_obs
    trans = rng.random((S, A, A, S, Z, Z))
    trans /= trans.reshape(S, A, A, -1).sum(axis=-1)[..., None, None, None]
    reward = rng.uniform(-1.0, 1.0, size=(S, A, A))
    b0 = rng.random(S)
    b0 /= b0.sum()
    names = lambda prefix, n: tuple(f"{prefix}{i}" for i in range(n))
    return PosgModel(names("s", S), names("a", A), names("a", A), names("z", Z),
                     names("z", Z), trans, reward, horizon, 1.0, b0,
                     name=f"random:{seed}:{S}x{A}x{Z}x{horizon}")


def _parse_random(spec: str) -> PosgModel:
    parts = spec.split(":")
    if len(parts) != 4:
        raise ModelError(f"bad random builtin {spec!r}; expected builtin:random:<seed>:<S>x<A>x<Z>x<H>")
    try:
        seed = int(parts[2])
        S, A, Z, H = (int(x) for x in parts[3].split("x"))
    except ValueError as exc:
        raise ModelError(f"bad random builtin {spec!r}: {exc}") from None
    return build_random_model(seed, S, A, Z, H)


def _field(data: dict, key: str, ctx: str):
    if key not in data:
        raise ModelError(f"{ctx}: missing field {key!r}")
    return data[key]


def _index(value, size: int, ctx: str) -> int:
    if not isinstance(value, int) or isinstance(value, bool) or not 0 <= value < size:
        raise ModelError(f"{ctx}: index {value!r} out of range [0, {size})")
    return value


def model_from_json(data: dict, name: str = "model") -> PosgModel:
    states = _field(data, "states", "model")
    actions = _field(data, "actions", "model")
    observations = _field(data, "observations", "model")
    if len(actions) != 2 or len(observations) != 2:
        raise ModelError("model: 'actions' and 'observations' need one list per player")
    S, A1, A2 = len(states), len(actions[0]), len(actions[1])
    Z1, Z2 = len(observations[0]), len(observations[1])
    start = np.asarray(_field(data, "start", "model"), dtype=float)
    trans = np.zeros((S, A1, A2, S, Z1, Z2))
    for i, row in enumerate(_field(data, "transitions", "model")):
        ctx = f"transitions[{i}]"
        s = _index(_field(row, "s", ctx), S, ctx + ".s")
        a1 = _index(_field(row, "a1", ctx), A1, ctx + ".a1")
        a2 = _index(_field(row, "a2", ctx), A2, ctx + ".a2")
        s2 = _index(_field(row, "s2", ctx), S, ctx + ".s2")
        z1 = _index(_field(row, "z1", ctx), Z1, ctx + ".z1")
        z2 = _index(_field(row, "z2", ctx), Z2, ctx + ".z2")
        p = float(_field(row, "p", ctx))
        if not 0.0 <= p <= 1.0:
            raise ModelError(f"{ctx}.p: probability {p} outside [0, 1]")
        trans[s, a1, a2, s2, z1, z2] += p
    reward = np.zeros((S, A1, A2))
    for i, row in enumerate(data.get("rewards", [])):
        ctx = f"rewards[{i}]"
        s = _index(_field(row, "s", ctx), S, ctx + ".s")
        a1 = _index(_field(row, "a1", ctx), A1, ctx + ".a1")
        a2 = _index(_field(row, "a2", ctx), A2, ctx + ".a2")
        reward[s, a1, a2] = float(_field(row, "r", ctx))
    sums = trans.reshape(S, A1, A2, -1).sum(axis=-1)
    bad = np.argwhere(np.abs(sums - 1.0) > NUMERIC.reject_tol)
    if bad.size:
        s, a1, a2 = bad[0]
        raise ModelError(f"transitions for (s={s}, a1={a1}, a2={a2}) sum to "
                         f"{sums[s, a1, a2]:.9g}, not 1")
    if start.shape != (S,):
        raise ModelError(f"start: expected {S} entries, got {start.size}")
    if abs(start.sum() - 1.0) > NUMERIC.reject_tol:
        raise ModelError(f"start sums to {start.sum():.9g}, not 1")
    # small drift inside the rejection tolerance is renormalized away
    trans /= sums[..., None, None, None]
    start = start / start.sum()
    return PosgModel(states, actions[0], actions[1], observations[0], observations[1],
                     trans, reward, int(_field(data, "horizon", "model")),
                     float(data.get("discount", 1.0)), start, name=name)


def load_model(source: str | Path) -> PosgModel:
    """Load a model from a JSON file or a ``builtin:`` identifier."""
    src = str(source)
    if src == "builtin:matching_pennies":
        return matching_pennies()
    if src.startswith("builtin:random:"):
        return _parse_random(src)
    if src.startswith("builtin:"):
        raise ModelError(f"unknown builtin {src!r}")
    path = Path(src)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ModelError(f"cannot read {path}: {exc}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    if not isinstance(data, dict):
        raise ModelError(f"{path}: top-level value must be an object")
    return model_from_json(data, name=path.stem)


@dataclass(frozen=True)
class AOH:
    """One player's action-observation history ``((a0, z1), (a1, z2), ...)``."""

    player: int
    entries: tuple[tuple[int, int], ...] = ()

    @property
    def length(self) -> int:
        return len(self.entries)

    def extend(self, action: int, obs: int) -> "AOH":
        return AOH(self.player, self.entries + ((int(action), int(obs)),))

    def __str__(self) -> str:
        return "/".join(f"{a}/{z}" for a, z in self.entries)


def _entries(aoh) -> tuple[tuple[int, int], ...]:
    if isinstance(aoh, AOH):
        return aoh.entries
    return tuple((int(a), int(z)) for a, z in aoh)


def belief_update(model: PosgModel, belief: np.ndarray, a1: int, a2: int,
                  z1: int, z2: int):
    """One HMM filtering step; returns the posterior or ``UNREACHABLE``."""
    nxt = belief @ model.trans[:, a1, a2, :, z1, z2]
    total = nxt.sum()
    if total <= 0.0:
        return UNREACHABLE
    return nxt / total


def filter_belief(model: PosgModel, joint_aoh: Sequence):
    """State distribution given a joint history, or ``UNREACHABLE``."""
    h1, h2 = (_entries(x) for x in joint_aoh)
    if len(h1) != len(h2):
        raise ValueError(f"joint history has mismatched lengths {len(h1)} and {len(h2)}")
    if len(h1) > model.horizon - 1:
        raise ValueError(f"history length {len(h1)} exceeds H-1 = {model.horizon - 1}")
    belief = model.b0.copy()
    for (a1, z1), (a2, z2) in zip(h1, h2):
        belief = belief_update(model, belief, a1, a2, z1, z2)
        if belief is UNREACHABLE:
            return UNREACHABLE
    return belief


class HistoryTable:
    """Interned private histories of one player; id 0 is the empty history."""

    def __init__(self, player: int, n_actions: int, n_obs: int):
        self.player = player
        self.n_actions = n_actions
        self.n_obs = n_obs
        self.parent = [-1]
        self.action = [-1]
        self.obs = [-1]
        self.length = [0]
        self._children: dict[tuple[int, int, int], int] = {}

    def __len__(self) -> int:
        return len(self.parent)

    def child(self, h: int, a: int, z: int) -> int:
        key = (int(h), int(a), int(z))
        hid = self._children.get(key)
        if hid is None:
            hid = len(self.parent)
            self.parent.append(key[0])
            self.action.append(key[1])
            self.obs.append(key[2])
            self.length.append(self.length[key[0]] + 1)
            self._children[key] = hid
        return hid

    def children(self, hs: Sequence[int]) -> np.ndarray:
        """Child ids as an array of shape ``(len(hs), n_actions, n_obs)``."""
        out = np.empty((len(hs), self.n_actions, self.n_obs), dtype=np.int64)
        for i, h in enumerate(hs):
            for a in range(self.n_actions):
                for z in range(self.n_obs):
                    out[i, a, z] = self.child(h, a, z)
        return out

    def entries(self, h: int) -> tuple[tuple[int, int], ...]:
        out = []
        while h > 0:
            out.append((self.action[h], self.obs[h]))
            h = self.parent[h]
        return tuple(reversed(out))

    def intern(self, entries) -> int:
        h = 0
        for a, z in _entries(entries):
            if not (0 <= a < self.n_actions and 0 <= z < self.n_obs):
                raise ValueError(f"action/observation ({a}, {z}) invalid for player {self.player}")
            h = self.child(h, a, z)
        return h

    def ancestor(self, h: int, length: int) -> int:
        while self.length[h] > length:
            h = self.parent[h]
        return h

    def to_string(self, h: int) -> str:
        return "/".join(f"{a}/{z}" for a, z in self.entries(h))

    def from_string(self, text: str) -> int:
        if not text:
            return 0
        parts = [int(x) for x in text.split("/")]
        if len(parts) % 2:
            raise ValueError(f"history string {text!r} has an odd number of fields")
        return self.intern(zip(parts[0::2], parts[1::2]))

    def all_at(self, length: int) -> list[int]:
        """Every history of the given length, interning them as needed."""
        level = [0]
        for _ in range(length):
            level = [self.child(h, a, z) for h in level
                     for a in range(self.n_actions) for z in range(self.n_obs)]
        return level


class Registry:
    """Per-model interning of private histories and cached joint-history data.

    For each reachable joint history the registry keeps the filtered belief,
    ``q[j, a1, a2, z1, z2] = sum_{s, s2} b(s) P(s2, z1, z2 | s, a1, a2)`` and
    ``r[j, a1, a2] = sum_s b(s) r(s, a1, a2)``.
    """

    def __init__(self, model: PosgModel):
        self.model = model
        A1, A2 = model.n_actions(1), model.n_actions(2)
        Z1, Z2 = model.n_obs(1), model.n_obs(2)
        self.tables = {1: HistoryTable(1, A1, Z1), 2: HistoryTable(2, A2, Z2)}
        self._joint: dict[tuple[int, int], int] = {}
        self._n = 0
        cap = 64
        self.belief = np.empty((cap, model.n_states))
        self.q = np.empty((cap, A1, A2, Z1, Z2))
        self.r = np.empty((cap, A1, A2))
        self._store(0, 0, model.b0)

    def table(self, player: int) -> HistoryTable:
        return self.tables[player]

    def _store(self, h1: int, h2: int, belief: np.ndarray) -> int:
        if self._n == len(self.belief):
            cap = 2 * self._n
            self.belief = np.resize(self.belief, (cap,) + self.belief.shape[1:])
            self.q = np.resize(self.q, (cap,) + self.q.shape[1:])
            self.r = np.resize(self.r, (cap,) + self.r.shape[1:])
        j = self._n
        m = self.model
        self.belief[j] = belief
        self.q[j] = np.einsum("s,sabtyz->abyz", belief, m.trans)
        self.r[j] = np.einsum("s,sab->ab", belief, m.reward)
        self._n += 1
        self._joint[(h1, h2)] = j
        return j

    def joint(self, h1: int, h2: int) -> int:
        """Index of a joint history, or -1 when it is unreachable."""
        key = (int(h1), int(h2))
        j = self._joint.get(key)
        if j is not None:
            return j
        t1, t2 = self.tables[1], self.tables[2]
        if t1.length[key[0]] != t2.length[key[1]]:
            raise ValueError("joint history has mismatched lengths")
        pj = self.joint(t1.parent[key[0]], t2.parent[key[1]])
        if pj < 0:
            self._joint[key] = -1
            return -1
        b = belief_update(self.model, self.belief[pj], t1.action[key[0]], t2.action[key[1]],
                          t1.obs[key[0]], t2.obs[key[1]])
        if b is UNREACHABLE:
            self._joint[key] = -1
            return -1
        return self._store(key[0], key[1], b)

    def joints(self, h1s, h2s) -> np.ndarray:
        return np.array([self.joint(a, b) for a, b in zip(h1s, h2s)], dtype=np.int64)


_REGISTRIES: "weakref.WeakKeyDictionary[PosgModel, Registry]" = weakref.WeakKeyDictionary()


def registry(model: PosgModel) -> Registry:
    reg = _REGISTRIES.get(model)
    if reg is None:
        reg = Registry(model)
        _REGISTRIES[model] = reg
    return reg


def _clean_dist(probs: np.ndarray, ctx: str) -> np.ndarray:
    probs = np.asarray(probs, dtype=float)
    if probs.size and (np.any(probs < -NUMERIC.reject_tol)
                       or np.any(np.abs(probs.sum(axis=-1) - 1.0) > NUMERIC.reject_tol)):
        raise ValueError(f"{ctx}: rows must be probability distributions")
    probs = np.clip(probs, 0.0, None)
    if probs.size:
        probs = probs / probs.sum(axis=-1, keepdims=True)
    return probs


@dataclass(frozen=True, eq=False)
class DecisionRule:
    """Map from a player's step-``step`` histories to action distributions.

    Histories absent from ``ids`` get the uniform distribution unless
    ``fallback`` is False, in which case strict lookups raise ``KeyError``.
    """

    player: int
    step: int
    n_actions: int
    ids: np.ndarray
    probs: np.ndarray
    fallback: bool = True

    def __post_init__(self):
        ids = np.asarray(self.ids, dtype=np.int64).reshape(-1)
        probs = np.asarray(self.probs, dtype=float).reshape(len(ids), self.n_actions)
        order = np.argsort(ids, kind="stable")
        ids, probs = ids[order], _clean_dist(probs[order], "decision rule")
        if len(ids) > 1 and np.any(np.diff(ids) == 0):
            raise ValueError("decision rule lists a history twice")
        ids.flags.writeable = False
        probs.flags.writeable = False
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "probs", probs)

    @classmethod
    def uniform(cls, player: int, step: int, n_actions: int) -> "DecisionRule":
        return cls(player, step, n_actions, np.empty(0, np.int64), np.empty((0, n_actions)))

    @classmethod
    def from_map(cls, player: int, step: int, n_actions: int, mapping: dict,
                 fallback: bool = True) -> "DecisionRule":
        keys = sorted(mapping)
        probs = np.array([np.asarray(mapping[k], float) for k in keys]).reshape(len(keys), n_actions)
        return cls(player, step, n_actions, np.array(keys, np.int64), probs, fallback)

    def lookup(self, hs, strict: bool = False) -> np.ndarray:
        hs = np.asarray(hs, dtype=np.int64).reshape(-1)
        out = np.full((len(hs), self.n_actions), 1.0 / self.n_actions)
        if len(self.ids) == 0:
            found = np.zeros(len(hs), bool)
        else:
            pos = np.minimum(np.searchsorted(self.ids, hs), len(self.ids) - 1)
            found = self.ids[pos] == hs
            out[found] = self.probs[pos[found]]
        if strict and not self.fallback and not np.all(found):
            missing = hs[~found][0]
            raise KeyError(f"decision rule for player {self.player} at step {self.step} "
                           f"has no entry for history id {missing}")
        return out

    def dist(self, h: int) -> np.ndarray:
        return self.lookup([h])[0]


@dataclass(frozen=True, eq=False)
class BehavioralStrategy:
    player: int
    start: int
    rules: tuple[DecisionRule, ...]

    def __post_init__(self):
        for k, rule in enumerate(self.rules):
            if rule.step != self.start + k or rule.player != self.player:
                raise ValueError("behavioral strategy rules must be contiguous and share a player")
        object.__setattr__(self, "rules", tuple(self.rules))

    def rule(self, t: int) -> DecisionRule:
        return self.rules[t - self.start]

    @classmethod
    def uniform(cls, model: PosgModel, player: int, start: int = 0) -> "BehavioralStrategy":
        A = model.n_actions(player)
        return cls(player, start, tuple(DecisionRule.uniform(player, t, A)
                                        for t in range(start, model.horizon)))


def behavioral_to_json(strategy: BehavioralStrategy, model: PosgModel) -> dict:
    table = registry(model).table(strategy.player)
    rules = []
    for rule in strategy.rules:
        entries = [{"aoh": table.to_string(int(h)), "dist": [float(x) for x in p]}
                   for h, p in zip(rule.ids, rule.probs)]
        rules.append({"t": rule.step, "entries": entries})
    return {"player": strategy.player, "horizon": model.horizon, "rules": rules}


def behavioral_from_json(data: dict, model: PosgModel) -> BehavioralStrategy:
    player = int(data["player"])
    if player not in (1, 2):
        raise ModelError(f"player must be 1 or 2, got {player}")
    table = registry(model).table(player)
    A = model.n_actions(player)
    by_step = {int(r["t"]): r for r in data.get("rules", [])}
    start = min(by_step, default=0)
    rules = []
    for t in range(start, model.horizon):
        mapping = {}
        for e in by_step.get(t, {"entries": []})["entries"]:
            h = table.from_string(e["aoh"])
            if table.length[h] != t:
                raise ModelError(f"history {e['aoh']!r} listed under step {t}")
            mapping[h] = e["dist"]
        rules.append(DecisionRule.from_map(player, t, A, mapping))
    return BehavioralStrategy(player, start, tuple(rules))
