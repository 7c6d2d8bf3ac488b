"""Training recipes: JSON in, validated dataclasses and step timelines out.

A recipe file pins every knob of a run: stage, epochs, batch size, learning
rate schedule, sparsity schedule (or null for dense), distillation settings,
and weight decay. Parsing is strict: unknown keys anywhere are rejected with
their JSON path, and every cross-field rule is checked up front so a bad
recipe fails before any training starts.

``compile_timeline`` turns a recipe plus a steps-per-epoch figure into the
concrete per-step plan (lr value for every step, prune events with targets,
eval points). ``audit_recipe`` compares a recipe against the reference
settings table embedded here, field by field; the bundled recipe files must
audit clean, which guards them against silent edits.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .distillation import KDConfig
from .pruning import POLICIES
from .schedules import (
    LRScheduleParams,
    SparsityScheduleParams,
    event_targets,
    linear_decay_lr,
    lr_at,
    prune_event_steps,
)

STAGES = ("downstream", "upstream", "upstream-finetune")
LR_KINDS = ("cyclic", "linear")


class RecipeError(ValueError):
    """A recipe failed validation; the message names the offending path."""


@dataclass(frozen=True)
class LRSpec:
    kind: str
    initial: float
    final: float | None = None
    cycle_length_epochs: float | None = None


@dataclass(frozen=True)
class SparsitySpec:
    initial_step: float
    final: float
    head_freeze_epochs: int
    tail_freeze_epochs: int
    prune_frequency_per_epoch: int
    policy: str


@dataclass(frozen=True)
class Recipe:
    name: str
    stage: str
    total_epochs: int
    batch_size: int
    weight_decay: float
    seeds: tuple[int, ...]
    lr: LRSpec
    sparsity: SparsitySpec | None
    kd: KDConfig
    mask_source: str | None

    def to_dict(self) -> dict:
        lr: dict = {"kind": self.lr.kind, "initial": self.lr.initial}
        if self.lr.kind == "cyclic":
            lr["final"] = self.lr.final
            lr["cycle_length_epochs"] = self.lr.cycle_length_epochs
        sparsity = None
        if self.sparsity is not None:
            sparsity = {
                "initial_step": self.sparsity.initial_step,
                "final": self.sparsity.final,
                "head_freeze_epochs": self.sparsity.head_freeze_epochs,
                "tail_freeze_epochs": self.sparsity.tail_freeze_epochs,
                "prune_frequency_per_epoch": self.sparsity.prune_frequency_per_epoch,
                "policy": self.sparsity.policy,
            }
        return {
            "name": self.name,
            "stage": self.stage,
            "total_epochs": self.total_epochs,
            "batch_size": self.batch_size,
            "weight_decay": self.weight_decay,
            "seeds": list(self.seeds),
            "lr": lr,
            "sparsity": sparsity,
            "kd": {
                "hardness": self.kd.hardness,
                "temperature": self.kd.temperature,
                "scale_kl_by_t_squared": self.kd.scale_kl_by_t_squared,
            },
            "mask_source": self.mask_source,
        }


def _fail(path: str, message: str):
    raise RecipeError(f"{path}: {message}")


def _expect_keys(obj: dict, allowed: set[str], required: set[str], path: str) -> None:
    unknown = set(obj) - allowed
    if unknown:
        _fail(path, f"unknown key {sorted(unknown)[0]!r}")
    missing = required - set(obj)
    if missing:
        _fail(path, f"missing key {sorted(missing)[0]!r}")


def _expect_int(obj: dict, key: str, path: str, minimum: int | None = None) -> int:
    val = obj[key]
    if isinstance(val, bool) or not isinstance(val, int):
        _fail(f"{path}.{key}", f"expected an integer, got {val!r}")
    if minimum is not None and val < minimum:
        _fail(f"{path}.{key}", f"must be >= {minimum}, got {val}")
    return val


def _expect_number(obj: dict, key: str, path: str) -> float:
    val = obj[key]
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        _fail(f"{path}.{key}", f"expected a number, got {val!r}")
    return float(val)


def parse_recipe(source) -> Recipe:
    """Parse a recipe from a JSON string or an already-decoded dict."""
    if isinstance(source, str):
        try:
            obj = json.loads(source)
        except json.JSONDecodeError as exc:
            raise RecipeError(f"recipe: invalid JSON ({exc})") from None
    else:
        obj = source
    if not isinstance(obj, dict):
        _fail("recipe", f"expected an object, got {type(obj).__name__}")

    top = {"name", "stage", "total_epochs", "batch_size", "weight_decay",
           "seeds", "lr", "sparsity", "kd", "mask_source"}
    _expect_keys(obj, top, top, "recipe")

    name = obj["name"]
    if not isinstance(name, str) or not name:
        _fail("recipe.name", "expected a non-empty string")
    stage = obj["stage"]
    if stage not in STAGES:
        _fail("recipe.stage", f"unknown stage {stage!r}, expected one of {STAGES}")
    total_epochs = _expect_int(obj, "total_epochs", "recipe", minimum=1)
    batch_size = _expect_int(obj, "batch_size", "recipe", minimum=1)
    weight_decay = _expect_number(obj, "weight_decay", "recipe")
    if weight_decay < 0.0:
        _fail("recipe.weight_decay", f"must be >= 0, got {weight_decay}")

    seeds = obj["seeds"]
    if not isinstance(seeds, list) or not seeds:
        _fail("recipe.seeds", "expected a non-empty list of integers")
    for i, s in enumerate(seeds):
        if isinstance(s, bool) or not isinstance(s, int):
            _fail(f"recipe.seeds[{i}]", f"expected an integer, got {s!r}")
    if len(set(seeds)) != len(seeds):
        _fail("recipe.seeds", "seeds must be distinct")

    lr_obj = obj["lr"]
    if not isinstance(lr_obj, dict):
        _fail("recipe.lr", "expected an object")
    kind = lr_obj.get("kind")
    if kind not in LR_KINDS:
        _fail("recipe.lr.kind", f"unknown kind {kind!r}, expected one of {LR_KINDS}")
    if kind == "cyclic":
        _expect_keys(lr_obj, {"kind", "initial", "final", "cycle_length_epochs"},
                     {"kind", "initial", "final", "cycle_length_epochs"}, "recipe.lr")
        initial = _expect_number(lr_obj, "initial", "recipe.lr")
        final = _expect_number(lr_obj, "final", "recipe.lr")
        cycle = _expect_number(lr_obj, "cycle_length_epochs", "recipe.lr")
        if not initial > final > 0.0:
            _fail("recipe.lr", f"need initial > final > 0, got {initial} and {final}")
        if cycle <= 0.0:
            _fail("recipe.lr.cycle_length_epochs", f"must be > 0, got {cycle}")
        ratio = total_epochs / cycle
        if abs(ratio - round(ratio)) > 1e-9:
            _fail("recipe.lr.cycle_length_epochs",
                  f"{cycle} does not divide total_epochs {total_epochs}")
        lr = LRSpec(kind="cyclic", initial=initial, final=final,
                    cycle_length_epochs=cycle)
    else:
        _expect_keys(lr_obj, {"kind", "initial"}, {"kind", "initial"}, "recipe.lr")
        initial = _expect_number(lr_obj, "initial", "recipe.lr")
        if initial <= 0.0:
            _fail("recipe.lr.initial", f"must be > 0, got {initial}")
        lr = LRSpec(kind="linear", initial=initial)

    sparsity_obj = obj["sparsity"]
    sparsity = None
    if sparsity_obj is not None:
        if not isinstance(sparsity_obj, dict):
            _fail("recipe.sparsity", "expected an object or null")
        keys = {"initial_step", "final", "head_freeze_epochs", "tail_freeze_epochs",
                "prune_frequency_per_epoch", "policy"}
        _expect_keys(sparsity_obj, keys, keys, "recipe.sparsity")
        initial_step = _expect_number(sparsity_obj, "initial_step", "recipe.sparsity")
        final = _expect_number(sparsity_obj, "final", "recipe.sparsity")
        head = _expect_int(sparsity_obj, "head_freeze_epochs", "recipe.sparsity", minimum=0)
        tail = _expect_int(sparsity_obj, "tail_freeze_epochs", "recipe.sparsity", minimum=0)
        freq = _expect_int(sparsity_obj, "prune_frequency_per_epoch", "recipe.sparsity", minimum=1)
        policy = sparsity_obj["policy"]
        if policy not in POLICIES:
            _fail("recipe.sparsity.policy",
                  f"unknown policy {policy!r}, expected one of {POLICIES}")
        if not 0.0 <= initial_step < 1.0:
            _fail("recipe.sparsity.initial_step", f"must be in [0, 1), got {initial_step}")
        if not 0.0 < final <= 1.0:
            _fail("recipe.sparsity.final", f"must be in (0, 1], got {final}")
        if initial_step >= final:
            _fail("recipe.sparsity", f"initial_step {initial_step} must be below final {final}")
        if head + tail >= total_epochs:
            _fail("recipe.sparsity",
                  f"freeze windows ({head} head + {tail} tail) leave no epochs "
                  f"out of {total_epochs} for pruning")
        sparsity = SparsitySpec(
            initial_step=initial_step, final=final, head_freeze_epochs=head,
            tail_freeze_epochs=tail, prune_frequency_per_epoch=freq, policy=policy,
        )

    kd_obj = obj["kd"]
    if not isinstance(kd_obj, dict):
        _fail("recipe.kd", "expected an object")
    kd_keys = {"hardness", "temperature", "scale_kl_by_t_squared"}
    _expect_keys(kd_obj, kd_keys, kd_keys, "recipe.kd")
    hardness = _expect_number(kd_obj, "hardness", "recipe.kd")
    temperature = _expect_number(kd_obj, "temperature", "recipe.kd")
    scale_flag = kd_obj["scale_kl_by_t_squared"]
    if not isinstance(scale_flag, bool):
        _fail("recipe.kd.scale_kl_by_t_squared", f"expected a boolean, got {scale_flag!r}")
    try:
        kd = KDConfig(hardness=hardness, temperature=temperature,
                      scale_kl_by_t_squared=scale_flag)
    except ValueError as exc:
        raise RecipeError(f"recipe.kd: {exc}") from None

    mask_source = obj["mask_source"]
    if mask_source is not None and (not isinstance(mask_source, str) or not mask_source):
        _fail("recipe.mask_source", "expected a non-empty string or null")

    if stage == "upstream-finetune":
        if mask_source is None:
            _fail("recipe.mask_source", "required for the upstream-finetune stage")
        if sparsity is not None:
            _fail("recipe.sparsity", "must be null for the upstream-finetune stage "
                                     "(masks come from mask_source and stay fixed)")
        if lr.kind != "linear":
            _fail("recipe.lr.kind", "upstream-finetune uses a one-shot linear decay")
    elif mask_source is not None:
        _fail("recipe.mask_source", f"only valid for upstream-finetune, not {stage}")

    return Recipe(
        name=name, stage=stage, total_epochs=total_epochs, batch_size=batch_size,
        weight_decay=weight_decay, seeds=tuple(seeds), lr=lr, sparsity=sparsity,
        kd=kd, mask_source=mask_source,
    )


def serialize_recipe(recipe: Recipe) -> str:
    """Canonical JSON text (sorted keys, two-space indent, trailing newline)."""
    return json.dumps(recipe.to_dict(), sort_keys=True, indent=2) + "\n"


def recipe_hash(recipe: Recipe) -> str:
    return hashlib.sha256(serialize_recipe(recipe).encode("utf-8")).hexdigest()


def override_field(recipe: Recipe, path: str, value) -> Recipe:
    """A copy of the recipe with one dotted field replaced, revalidated from
    scratch; used by sweeps. Example: override_field(r, "kd.hardness", 0.6)."""
    obj = recipe.to_dict()
    parts = path.split(".")
    node = obj
    for part in parts[:-1]:
        if not isinstance(node, dict) or part not in node:
            raise RecipeError(f"recipe has no field {path!r}")
        node = node[part]
    if not isinstance(node, dict) or parts[-1] not in node:
        raise RecipeError(f"recipe has no field {path!r}")
    node[parts[-1]] = value
    return parse_recipe(obj)


def bundled_recipe_names() -> list[str]:
    root = resources.files("gradprune").joinpath("data")
    return sorted(
        p.name[:-5] for p in root.iterdir()
        if p.name.endswith(".json") and not p.name.endswith(".schema.json")
    )


def load_bundled(name: str) -> Recipe:
    root = resources.files("gradprune").joinpath("data")
    path = root.joinpath(f"{name}.json")
    if not path.is_file():
        raise RecipeError(
            f"no bundled recipe {name!r}; available: {bundled_recipe_names()}"
        )
    return parse_recipe(path.read_text(encoding="utf-8"))


@dataclass(frozen=True)
class Timeline:
    """A recipe made concrete for a particular steps-per-epoch."""
    recipe_name: str
    steps_per_epoch: int
    total_steps: int
    lr: np.ndarray
    prune_events: tuple[tuple[int, float], ...]
    eval_steps: tuple[int, ...]
    num_lr_cycles: int


def compile_timeline(recipe: Recipe, steps_per_epoch: int) -> Timeline:
    """Lay the recipe out on the global step axis.

    Needs steps_per_epoch because the recipe speaks in epochs; the result
    has a learning rate for every step, each prune event's (step, target),
    and the evaluation points (epoch ends plus every prune event).
    """
    if steps_per_epoch < 1:
        raise ValueError(f"steps_per_epoch must be >= 1, got {steps_per_epoch}")
    total_steps = recipe.total_epochs * steps_per_epoch

    if recipe.lr.kind == "cyclic":
        cycle_exact = recipe.lr.cycle_length_epochs * steps_per_epoch
        cycle_steps = round(cycle_exact)
        if abs(cycle_exact - cycle_steps) > 1e-9:
            raise ValueError(
                f"cycle of {recipe.lr.cycle_length_epochs} epochs is not a whole "
                f"number of steps at {steps_per_epoch} steps/epoch"
            )
        params = LRScheduleParams(
            lr_init=recipe.lr.initial, lr_final=recipe.lr.final,
            cycle_steps=int(cycle_steps), total_steps=total_steps,
        )
        lr = np.array([lr_at(params, s) for s in range(total_steps)])
        num_cycles = params.num_cycles
    else:
        lr = np.array([
            linear_decay_lr(recipe.lr.initial, total_steps, s)
            for s in range(total_steps)
        ])
        num_cycles = 0

    events: tuple[tuple[int, float], ...] = ()
    if recipe.sparsity is not None:
        sp = recipe.sparsity
        params = SparsityScheduleParams(
            initial_step=sp.initial_step, final=sp.final,
            total_epochs=recipe.total_epochs,
            head_freeze_epochs=sp.head_freeze_epochs,
            tail_freeze_epochs=sp.tail_freeze_epochs,
            prune_frequency_per_epoch=sp.prune_frequency_per_epoch,
            steps_per_epoch=steps_per_epoch,
        )
        steps = prune_event_steps(params)
        targets = event_targets(params)
        if len(steps) != params.num_events or np.any(np.diff(steps) <= 0):
            raise AssertionError("prune events must be distinct and increasing")
        events = tuple((int(s), float(t)) for s, t in zip(steps, targets))

    epoch_ends = {e * steps_per_epoch - 1 for e in range(1, recipe.total_epochs + 1)}
    eval_steps = tuple(sorted(epoch_ends | {s for s, _ in events}))
    return Timeline(
        recipe_name=recipe.name,
        steps_per_epoch=steps_per_epoch,
        total_steps=total_steps,
        lr=lr,
        prune_events=events,
        eval_steps=eval_steps,
        num_lr_cycles=num_cycles,
    )


@dataclass(frozen=True)
class FieldDiff:
    path: str
    expected: object
    actual: object


def _flatten(obj: dict, prefix: str = "") -> dict:
    flat = {}
    for key, val in obj.items():
        path = f"{prefix}{key}"
        if isinstance(val, dict):
            flat.update(_flatten(val, path + "."))
        else:
            flat[path] = val
    return flat


# Reference settings for the bundled recipes, spelled out independently of
# the JSON files so either side catches a silent edit of the other.
REFERENCE_SETTINGS: dict[str, dict] = {
    "downstream-10ep": {
        "name": "downstream-10ep",
        "stage": "downstream",
        "total_epochs": 10,
        "batch_size": 32,
        "weight_decay": 0.0,
        "seeds": [1, 2, 3],
        "lr": {"kind": "cyclic", "initial": 1e-4, "final": 1e-6,
               "cycle_length_epochs": 2},
        "sparsity": {"initial_step": 0.7, "final": 0.9,
                     "head_freeze_epochs": 2, "tail_freeze_epochs": 2,
                     "prune_frequency_per_epoch": 10, "policy": "uniform"},
        "kd": {"hardness": 1.0, "temperature": 5.5, "scale_kl_by_t_squared": True},
        "mask_source": None,
    },
    "downstream-30ep": {
        "name": "downstream-30ep",
        "stage": "downstream",
        "total_epochs": 30,
        "batch_size": 32,
        "weight_decay": 0.0,
        "seeds": [1, 2, 3],
        "lr": {"kind": "cyclic", "initial": 1e-4, "final": 1e-6,
               "cycle_length_epochs": 2},
        "sparsity": {"initial_step": 0.7, "final": 0.97,
                     "head_freeze_epochs": 2, "tail_freeze_epochs": 2,
                     "prune_frequency_per_epoch": 10, "policy": "uniform"},
        "kd": {"hardness": 1.0, "temperature": 5.5, "scale_kl_by_t_squared": True},
        "mask_source": None,
    },
    "upstream-3ep": {
        "name": "upstream-3ep",
        "stage": "upstream",
        "total_epochs": 3,
        "batch_size": 256,
        "weight_decay": 0.01,
        "seeds": [1, 2, 3],
        "lr": {"kind": "cyclic", "initial": 5e-4, "final": 5e-6,
               "cycle_length_epochs": 0.5},
        "sparsity": {"initial_step": 0.7, "final": 0.9,
                     "head_freeze_epochs": 0, "tail_freeze_epochs": 1,
                     "prune_frequency_per_epoch": 100, "policy": "uniform"},
        "kd": {"hardness": 1.0, "temperature": 5.5, "scale_kl_by_t_squared": True},
        "mask_source": None,
    },
    "upstream-finetune-8ep": {
        "name": "upstream-finetune-8ep",
        "stage": "upstream-finetune",
        "total_epochs": 8,
        "batch_size": 32,
        "weight_decay": 0.0,
        "seeds": [1, 2, 3],
        "lr": {"kind": "linear", "initial": 1.5e-5},
        "sparsity": None,
        "kd": {"hardness": 1.0, "temperature": 5.5, "scale_kl_by_t_squared": True},
        "mask_source": "upstream-3ep",
    },
}


def audit_recipe(recipe: Recipe) -> list[FieldDiff]:
    """Field-by-field diff of a recipe against the reference settings table.

    An empty list means the recipe matches the reference exactly. Unknown
    recipe names are an error, not an empty diff.
    """
    if recipe.name not in REFERENCE_SETTINGS:
        raise RecipeError(
            f"no reference settings for recipe {recipe.name!r}; known: "
            f"{sorted(REFERENCE_SETTINGS)}"
        )
    expected = _flatten(REFERENCE_SETTINGS[recipe.name])
    actual = _flatten(recipe.to_dict())
    diffs = []
    for path in sorted(set(expected) | set(actual)):
        exp = expected.get(path, "<absent>")
        act = actual.get(path, "<absent>")
        if exp != act:
            diffs.append(FieldDiff(path=path, expected=exp, actual=act))
    return diffs
