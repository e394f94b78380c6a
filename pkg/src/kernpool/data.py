"""Panel CSV files, the synthetic scenario generator and fitted-model files.

Forecast CSV (long format, one row per member coordinate)::

    case_id,model_id,member_id,dim_index,value

Observation CSV::

    case_id,dim_index,value[,lead_time,location,date,alpha]

The optional meta and ``alpha`` columns may appear in either file; the
observation file wins if both carry them.
"""

from __future__ import annotations

import configparser
import csv
import math
from dataclasses import dataclass, field
from importlib import resources
from typing import Sequence

import numpy as np

from .pooling import Panel, Strategy, WeightVector
from .qp import Solution
from .recalibration import MbmParams

__all__ = [
    "PanelFormatError",
    "ModelFormatError",
    "ScenarioConfig",
    "generate_scenario",
    "load_preset",
    "PRESETS",
    "scenario_from_ini",
    "save_panel",
    "load_panel",
    "FittedModel",
    "save_model",
    "load_model",
    "FORMAT_VERSION",
]

FORECAST_COLUMNS = ("case_id", "model_id", "member_id", "dim_index", "value")
OBS_COLUMNS = ("case_id", "dim_index", "value")
META_COLUMNS = ("lead_time", "location", "date")
FORMAT_VERSION = 1
PRESETS = ("calibrated", "biased-underdispersed", "postprocessed")


class PanelFormatError(ValueError):
    pass


class ModelFormatError(ValueError):
    pass


# -- scenario generator ------------------------------------------------------

@dataclass(frozen=True)
class ScenarioConfig:
    """Synthetic panel: y = mu + eps, member = mu + b_j + tau_j * zeta + s_j * eta.

    mu, eps, zeta and eta are independent standard normals; zeta is shared by
    all members of model j in a case (a model-specific error), eta is drawn
    per member. With ``tau_j = 0`` every member and the observation are
    exchangeable up to bias and spread. ``s_j = sqrt(1 + tau_j^2)`` with
    ``b_j = 0`` makes model j probabilistically calibrated.
    """

    member_counts: tuple = (11, 21, 51)
    biases: tuple = (0.0, 0.0, 0.0)
    spreads: tuple = (1.0, 1.0, 1.0)
    model_errors: tuple | None = None
    n_train: int = 730
    n_test: int = 365
    d: int = 1
    seed: int = 0
    model_ids: tuple | None = None
    n_locations: int = 1
    n_lead_times: int = 1
    positive: bool = False

    def __post_init__(self):
        J = len(self.member_counts)
        if J < 1:
            raise ValueError("need at least one model")
        errs = (0.0,) * J if self.model_errors is None else tuple(self.model_errors)
        object.__setattr__(self, "model_errors", tuple(float(e) for e in errs))
        ids = tuple(f"m{j + 1}" for j in range(J)) if self.model_ids is None else tuple(self.model_ids)
        object.__setattr__(self, "model_ids", ids)
        for name in ("biases", "spreads", "model_errors", "model_ids"):
            if len(getattr(self, name)) != J:
                raise ValueError(f"{name} needs {J} entries")
        if any(int(m) < 1 for m in self.member_counts):
            raise ValueError("member counts must be >= 1")
        if any(not s > 0 for s in self.spreads):
            raise ValueError("spreads must be positive")
        if any(e < 0 for e in self.model_errors):
            raise ValueError("model errors must be non-negative")
        if min(self.n_train, self.n_test, self.d, self.n_locations, self.n_lead_times) < 1:
            raise ValueError("counts must be >= 1")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")

    @property
    def J(self) -> int:
        return len(self.member_counts)


_SPLITS = {"train": 0, "test": 1}
_TRUTH, _OBS, _MODEL_ERR, _MEMBERS = 0, 1, 2, 3


def _stream(seed: int, split: str, purpose: int, j: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), _SPLITS[split], purpose, j]))


def _make_split(cfg: ScenarioConfig, split: str, n: int) -> Panel:
    d = cfg.d
    mu = _stream(cfg.seed, split, _TRUTH).standard_normal((n, d))
    obs = mu + _stream(cfg.seed, split, _OBS).standard_normal((n, d))
    members = []
    for j, m in enumerate(cfg.member_counts):
        shared = cfg.model_errors[j] * _stream(cfg.seed, split, _MODEL_ERR, j).standard_normal((n, 1, d))
        eta = _stream(cfg.seed, split, _MEMBERS, j).standard_normal((n, int(m), d))
        members.append(mu[:, None, :] + cfg.biases[j] + shared + cfg.spreads[j] * eta)
    if cfg.positive:
        obs = np.square(obs)
        members = [np.square(X) for X in members]
    prefix = "tr" if split == "train" else "te"
    width = len(str(n - 1))
    case_ids = tuple(f"{prefix}{i:0{width}d}" for i in range(n))
    loc = np.arange(n) % cfg.n_locations
    lead = (np.arange(n) // cfg.n_locations) % cfg.n_lead_times
    date = np.arange(n) // (cfg.n_locations * cfg.n_lead_times)
    meta = {
        "location": np.array([f"S{v:02d}" for v in loc]),
        "lead_time": np.array([str(v) for v in lead]),
        "date": np.array([str(v) for v in date]),
    }
    return Panel(tuple(members), obs, cfg.model_ids, None, case_ids, meta)


def generate_scenario(cfg: ScenarioConfig):
    """Deterministic (train, test) panels; the two splits use disjoint streams."""
    return _make_split(cfg, "train", cfg.n_train), _make_split(cfg, "test", cfg.n_test)


def _floats(text: str) -> tuple:
    return tuple(float(v) for v in text.replace(",", " ").split())


def scenario_from_ini(text: str, **overrides) -> ScenarioConfig:
    """Parse a ``[scenario]`` INI block into a :class:`ScenarioConfig`."""
    cp = configparser.ConfigParser()
    cp.read_string(text)
    if "scenario" not in cp:
        raise ValueError("missing [scenario] section")
    sec = cp["scenario"]
    kw = {}
    if "member_counts" in sec:
        kw["member_counts"] = tuple(int(v) for v in _floats(sec["member_counts"]))
    for key in ("biases", "spreads", "model_errors"):
        if key in sec:
            kw[key] = _floats(sec[key])
    for key in ("n_train", "n_test", "d", "seed", "n_locations", "n_lead_times"):
        if key in sec:
            kw[key] = int(sec[key])
    if "model_ids" in sec:
        kw["model_ids"] = tuple(v.strip() for v in sec["model_ids"].split(",") if v.strip())
    if "positive" in sec:
        kw["positive"] = sec.getboolean("positive")
    kw.update({k: v for k, v in overrides.items() if v is not None})
    return ScenarioConfig(**kw)


def load_preset(name: str, **overrides) -> ScenarioConfig:
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    text = resources.files("kernpool").joinpath("presets", f"{name}.ini").read_text(encoding="utf-8")
    return scenario_from_ini(text, **overrides)


# -- panel CSV ---------------------------------------------------------------

def _num(v: float) -> str:
    return repr(float(v))


def save_panel(panel: Panel, forecast_path, obs_path) -> None:
    """Write a panel as forecast and observation CSVs (shortest round-trip floats)."""
    with open(forecast_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FORECAST_COLUMNS)
        for i, cid in enumerate(panel.case_ids):
            for mid, X in zip(panel.model_ids, panel.members):
                for m in range(X.shape[1]):
                    for k in range(panel.d):
                        w.writerow((cid, mid, m, k, _num(X[i, m, k])))
    meta_cols = [c for c in META_COLUMNS if c in panel.meta]
    write_alpha = bool(np.any(panel.alphas != 1.0))
    with open(obs_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(OBS_COLUMNS) + meta_cols + (["alpha"] if write_alpha else []))
        for i, cid in enumerate(panel.case_ids):
            extra = [panel.meta[c][i] for c in meta_cols]
            if write_alpha:
                extra.append(_num(panel.alphas[i]))
            for k in range(panel.d):
                w.writerow([cid, k, _num(panel.obs[i, k]), *extra])


def _sort_key(values):
    try:
        return sorted(values, key=int)
    except ValueError:
        return sorted(values)


def _read_rows(path, required: Sequence[str]):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise PanelFormatError(f"{path}: missing header row")
        missing = [c for c in required if c not in reader.fieldnames]
        if missing:
            raise PanelFormatError(f"{path}: missing columns {missing}")
        for lineno, row in enumerate(reader, start=2):
            if None in row or any(row[c] is None for c in required):
                raise PanelFormatError(f"{path}, row {lineno}: wrong number of fields")
            yield lineno, row


def _parse_value(path, lineno, text) -> float:
    try:
        v = float(text)
    except ValueError:
        raise PanelFormatError(f"{path}, row {lineno}: non-numeric value {text!r}") from None
    if not math.isfinite(v):
        raise PanelFormatError(f"{path}, row {lineno}: non-finite value {text!r}")
    return v


def _parse_dim(path, lineno, text) -> int:
    try:
        return int(text)
    except ValueError:
        raise PanelFormatError(f"{path}, row {lineno}: bad dim_index {text!r}") from None


def load_panel(forecast_path, obs_path) -> Panel:
    """Read a panel, ordering cases by ``case_id`` (numerically when all ids are integers)."""
    fc: dict = {}
    model_order: list = []
    meta_f: dict = {}
    for lineno, row in _read_rows(forecast_path, FORECAST_COLUMNS):
        cid, mid, mem = row["case_id"], row["model_id"], row["member_id"]
        k = _parse_dim(forecast_path, lineno, row["dim_index"])
        v = _parse_value(forecast_path, lineno, row["value"])
        if mid not in model_order:
            model_order.append(mid)
        cell = fc.setdefault(cid, {}).setdefault(mid, {}).setdefault(mem, {})
        if k in cell:
            raise PanelFormatError(f"{forecast_path}, row {lineno}: duplicate entry for "
                                   f"case {cid!r}, model {mid!r}, member {mem!r}, dim {k}")
        cell[k] = v
        for c in (*META_COLUMNS, "alpha"):
            if row.get(c) not in (None, ""):
                meta_f.setdefault(c, {}).setdefault(cid, row[c])
    obs: dict = {}
    meta_o: dict = {}
    for lineno, row in _read_rows(obs_path, OBS_COLUMNS):
        cid = row["case_id"]
        k = _parse_dim(obs_path, lineno, row["dim_index"])
        cell = obs.setdefault(cid, {})
        if k in cell:
            raise PanelFormatError(f"{obs_path}, row {lineno}: duplicate observation for case {cid!r}, dim {k}")
        cell[k] = _parse_value(obs_path, lineno, row["value"])
        for c in (*META_COLUMNS, "alpha"):
            if row.get(c) not in (None, ""):
                meta_o.setdefault(c, {}).setdefault(cid, row[c])
    if not fc:
        raise PanelFormatError(f"{forecast_path}: no forecast rows")

    case_ids = _sort_key(fc.keys())
    first = fc[case_ids[0]]
    members_of = {}
    for mid in model_order:
        if mid not in first:
            raise PanelFormatError(f"case {case_ids[0]!r} is missing model {mid!r}")
        members_of[mid] = _sort_key(first[mid].keys())
    d = len(next(iter(first[model_order[0]].values())))
    for cid in case_ids:
        if cid not in obs:
            raise PanelFormatError(f"case {cid!r} has no observation")
        if sorted(obs[cid]) != list(range(d)):
            raise PanelFormatError(f"case {cid!r}: observation dims {sorted(obs[cid])} != 0..{d - 1}")
        for mid in model_order:
            got = fc[cid].get(mid)
            if got is None:
                raise PanelFormatError(f"case {cid!r} is missing model {mid!r}")
            if set(got) != set(members_of[mid]):
                missing = sorted(set(members_of[mid]) - set(got))
                extra = sorted(set(got) - set(members_of[mid]))
                raise PanelFormatError(f"case {cid!r}, model {mid!r}: member mismatch "
                                       f"(missing {missing}, unexpected {extra})")
            for mem, dims in got.items():
                if sorted(dims) != list(range(d)):
                    raise PanelFormatError(f"case {cid!r}, model {mid!r}, member {mem!r}: "
                                           f"dims {sorted(dims)} != 0..{d - 1}")
    extra_obs = sorted(set(obs) - set(fc))
    if extra_obs:
        raise PanelFormatError(f"observation for unknown case {extra_obs[0]!r}")

    members = tuple(
        np.array([[[fc[cid][mid][mem][k] for k in range(d)] for mem in members_of[mid]] for cid in case_ids])
        for mid in model_order
    )
    y = np.array([[obs[cid][k] for k in range(d)] for cid in case_ids])
    meta = {}
    alphas = None
    for c in (*META_COLUMNS, "alpha"):
        src = meta_o.get(c) or meta_f.get(c)
        if src is None:
            continue
        vals = [src.get(cid) for cid in case_ids]
        if any(v is None for v in vals):
            raise PanelFormatError(f"column {c!r} is set for some cases but not for case "
                                   f"{case_ids[vals.index(None)]!r}")
        if c == "alpha":
            alphas = np.array([_parse_value(obs_path, 0, v) for v in vals])
        else:
            meta[c] = np.array(vals)
    return Panel(members, y, tuple(model_order), alphas, tuple(case_ids), meta)


# -- fitted models -----------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FittedModel:
    """Weights fitted per group, plus optional per-model MBM parameters."""

    strategy: Strategy
    kernel: str
    model_ids: tuple
    member_counts: tuple
    dim: int
    solutions: dict
    group_by: tuple = ()
    mbm: dict = field(default_factory=dict)
    mbm_group_by: tuple = ()
    mbm_transform: str = "sqrt"

    def solution_for(self, label: str) -> Solution:
        try:
            return self.solutions[label]
        except KeyError:
            raise KeyError(f"fitted model has no weights for group {label!r}") from None

    def check_panel(self, panel: Panel) -> None:
        if (tuple(panel.model_ids) != tuple(self.model_ids) or tuple(panel.member_counts) != tuple(self.member_counts)
                or panel.d != self.dim):
            raise ValueError(
                f"panel structure (models {panel.model_ids}, members {panel.member_counts}, d={panel.d}) does not "
                f"match fitted model (models {self.model_ids}, members {self.member_counts}, d={self.dim})")


def _join(values) -> str:
    return " ".join(repr(float(v)) for v in values)


def save_model(model: FittedModel, path) -> None:
    """Write a line-oriented ``key = value`` fitted-model file."""
    lines = [
        f"format_version = {FORMAT_VERSION}",
        f"strategy = {model.strategy.value}",
        f"kernel = {model.kernel}",
        f"model_ids = {','.join(model.model_ids)}",
        f"member_counts = {','.join(str(m) for m in model.member_counts)}",
        f"dim = {model.dim}",
        f"group_by = {','.join(model.group_by)}",
        f"n_fits = {len(model.solutions)}",
    ]
    for g, (label, sol) in enumerate(model.solutions.items()):
        lines += [
            f"fit.{g}.group = {label}",
            f"fit.{g}.space = {sol.w.space}",
            f"fit.{g}.weights = {_join(sol.w.weights)}",
            f"fit.{g}.objective = {sol.objective!r}",
            f"fit.{g}.score = {sol.score!r}",
            f"fit.{g}.iterations = {sol.iterations}",
            f"fit.{g}.kkt_residual = {sol.kkt_residual!r}",
            f"fit.{g}.converged = {str(sol.converged).lower()}",
        ]
    lines += [
        f"mbm_group_by = {','.join(model.mbm_group_by)}",
        f"mbm_transform = {model.mbm_transform}",
        f"n_mbm = {len(model.mbm)}",
    ]
    for g, ((mid, label), p) in enumerate(model.mbm.items()):
        lines += [f"mbm.{g}.model = {mid}", f"mbm.{g}.group = {label}", f"mbm.{g}.params = {_join(p.as_tuple())}"]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def _split_list(text: str) -> tuple:
    return tuple(v for v in text.split(",") if v)


def load_model(path) -> FittedModel:
    with open(path, encoding="utf-8") as fh:
        raw = fh.read().splitlines()
    kv = {}
    for lineno, line in enumerate(raw, start=1):
        if not line.strip():
            continue
        key, sep, value = line.partition(" = ")
        if not sep:
            key, sep, value = line.partition(" =")
        if not sep:
            raise ModelFormatError(f"{path}, line {lineno}: expected 'key = value'")
        if lineno == 1 and key != "format_version":
            raise ModelFormatError(f"{path}: missing format_version header")
        kv[key.strip()] = value
    if kv.get("format_version") != str(FORMAT_VERSION):
        raise ModelFormatError(f"{path}: unsupported format_version {kv.get('format_version')!r}")
    try:
        solutions = {}
        for g in range(int(kv["n_fits"])):
            p = f"fit.{g}."
            w = WeightVector(np.array([float(v) for v in kv[p + "weights"].split()]), kv[p + "space"])
            score = None if kv[p + "score"] == "None" else float(kv[p + "score"])
            solutions[kv[p + "group"]] = Solution(
                w, float(kv[p + "objective"]), int(kv[p + "iterations"]), float(kv[p + "kkt_residual"]),
                kv[p + "converged"] == "true", score)
        mbm = {}
        for g in range(int(kv.get("n_mbm", "0"))):
            p = f"mbm.{g}."
            mbm[(kv[p + "model"], kv[p + "group"])] = MbmParams(*(float(v) for v in kv[p + "params"].split()))
        return FittedModel(
            strategy=Strategy.parse(kv["strategy"]),
            kernel=kv["kernel"],
            model_ids=_split_list(kv["model_ids"]),
            member_counts=tuple(int(v) for v in _split_list(kv["member_counts"])),
            dim=int(kv["dim"]),
            solutions=solutions,
            group_by=_split_list(kv.get("group_by", "")),
            mbm=mbm,
            mbm_group_by=_split_list(kv.get("mbm_group_by", "")),
            mbm_transform=kv.get("mbm_transform", "sqrt"),
        )
    except KeyError as exc:
        raise ModelFormatError(f"{path}: missing key {exc.args[0]!r}") from None
