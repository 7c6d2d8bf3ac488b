"""Recipe parsing, auditing against the reference constants, and timelines."""

import json

import numpy as np
import pytest

from gradprune.recipes import (
    RecipeError,
    audit_recipe,
    bundled_recipe_names,
    compile_timeline,
    load_bundled,
    override_field,
    parse_recipe,
    recipe_hash,
    serialize_recipe,
)

BUNDLED = ("downstream-10ep", "downstream-30ep", "upstream-3ep", "upstream-finetune-8ep")


# ---------------------------------------------------------------------------
# bundled recipes


def test_bundled_names():
    assert tuple(bundled_recipe_names()) == BUNDLED
    with pytest.raises(RecipeError):
        load_bundled("downstream-20ep")


def test_downstream_recipe_constants():
    r = load_bundled("downstream-10ep")
    assert r.stage == "downstream"
    assert r.total_epochs == 10
    assert r.lr.kind == "cyclic"
    assert r.lr.initial == 1e-4
    assert r.lr.final == 1e-6
    assert r.lr.cycle_length_epochs == 2
    assert r.sparsity.initial_step == 0.70
    assert r.sparsity.prune_frequency_per_epoch == 10
    assert r.sparsity.head_freeze_epochs == 2
    assert r.sparsity.tail_freeze_epochs == 2
    assert r.kd.hardness == 1.0
    assert r.kd.temperature == 5.5
    assert r.weight_decay == 0.0
    assert r.mask_source is None


def test_upstream_recipe_constants():
    r = load_bundled("upstream-3ep")
    assert r.total_epochs == 3
    assert r.lr.initial == 5e-4
    assert r.lr.final == 5e-6
    assert r.lr.cycle_length_epochs == 0.5
    assert r.sparsity.prune_frequency_per_epoch == 100
    assert r.sparsity.head_freeze_epochs == 0
    assert r.sparsity.tail_freeze_epochs == 1
    assert r.weight_decay == 0.01
    assert r.batch_size == 256


def test_finetune_recipe_constants():
    r = load_bundled("upstream-finetune-8ep")
    assert r.stage == "upstream-finetune"
    assert r.total_epochs == 8
    assert r.lr.kind == "linear"
    assert r.lr.initial == 1.5e-5
    assert r.sparsity is None
    assert r.mask_source == "upstream-3ep"


def test_every_bundled_recipe_audits_clean():
    for name in BUNDLED:
        assert audit_recipe(load_bundled(name)) == []


def test_edited_recipe_audits_dirty():
    edited = override_field(load_bundled("downstream-10ep"), "kd.temperature", 2.0)
    diffs = audit_recipe(edited)
    assert len(diffs) == 1
    assert diffs[0].path == "kd.temperature"
    assert diffs[0].expected == 5.5
    assert diffs[0].actual == 2.0


def test_audit_rejects_unknown_recipe_names():
    renamed = override_field(load_bundled("downstream-10ep"), "name", "custom")
    with pytest.raises(RecipeError):
        audit_recipe(renamed)


# ---------------------------------------------------------------------------
# parsing


def test_serialize_parse_round_trip_is_fixed_point():
    for name in BUNDLED:
        recipe = load_bundled(name)
        text = serialize_recipe(recipe)
        again = parse_recipe(text)
        assert again == recipe
        assert serialize_recipe(again) == text
        assert recipe_hash(again) == recipe_hash(recipe)


def test_hash_tracks_content_not_identity():
    a = load_bundled("downstream-10ep")
    b = override_field(a, "kd.hardness", 0.6)
    assert recipe_hash(a) != recipe_hash(b)
    assert recipe_hash(override_field(b, "kd.hardness", 1.0)) == recipe_hash(a)


def base_dict():
    return json.loads(serialize_recipe(load_bundled("downstream-10ep")))


def test_unknown_keys_rejected_with_path():
    doc = base_dict()
    doc["sparsity"]["frequency"] = 10
    with pytest.raises(RecipeError, match="recipe.sparsity"):
        parse_recipe(json.dumps(doc))
    doc = base_dict()
    doc["extra"] = 1
    with pytest.raises(RecipeError, match="recipe"):
        parse_recipe(json.dumps(doc))


def test_missing_keys_rejected_with_path():
    doc = base_dict()
    del doc["kd"]["temperature"]
    with pytest.raises(RecipeError, match="recipe.kd"):
        parse_recipe(json.dumps(doc))


def test_out_of_range_fields_rejected():
    doc = base_dict()
    doc["kd"]["hardness"] = 1.5
    with pytest.raises(RecipeError, match="hardness"):
        parse_recipe(json.dumps(doc))
    doc = base_dict()
    doc["sparsity"]["initial_step"] = 0.95
    doc["sparsity"]["final"] = 0.9
    with pytest.raises(RecipeError):
        parse_recipe(json.dumps(doc))
    doc = base_dict()
    doc["total_epochs"] = True  # bools are not integers here
    with pytest.raises(RecipeError, match="total_epochs"):
        parse_recipe(json.dumps(doc))


def test_cross_field_rules():
    doc = base_dict()
    doc["lr"]["cycle_length_epochs"] = 3  # does not divide 10 epochs
    with pytest.raises(RecipeError, match="cycle"):
        parse_recipe(json.dumps(doc))

    doc = base_dict()
    doc["lr"] = {"kind": "cyclic", "initial": 1e-6, "final": 1e-4,
                 "cycle_length_epochs": 2}
    with pytest.raises(RecipeError):
        parse_recipe(json.dumps(doc))

    # a downstream recipe must not carry a mask source
    doc = base_dict()
    doc["mask_source"] = "somewhere"
    with pytest.raises(RecipeError, match="mask_source"):
        parse_recipe(json.dumps(doc))

    # finetune recipes need a mask source and must not re-prune
    doc = json.loads(serialize_recipe(load_bundled("upstream-finetune-8ep")))
    doc["mask_source"] = None
    with pytest.raises(RecipeError, match="mask_source"):
        parse_recipe(json.dumps(doc))
    doc = json.loads(serialize_recipe(load_bundled("upstream-finetune-8ep")))
    doc["sparsity"] = base_dict()["sparsity"]
    with pytest.raises(RecipeError, match="sparsity"):
        parse_recipe(json.dumps(doc))


def test_override_field_validates():
    r = load_bundled("downstream-10ep")
    changed = override_field(r, "sparsity.final", 0.97)
    assert changed.sparsity.final == 0.97
    assert r.sparsity.final == 0.9  # original untouched
    with pytest.raises(RecipeError):
        override_field(r, "sparsity.missing", 1)
    with pytest.raises(RecipeError):
        override_field(r, "kd.hardness", 2.0)  # revalidated after the edit


# ---------------------------------------------------------------------------
# timeline compilation


def test_downstream_10ep_timeline():
    t = compile_timeline(load_bundled("downstream-10ep"), steps_per_epoch=16)
    assert t.num_lr_cycles == 5
    assert len(t.prune_events) == 60
    assert t.total_steps == 160
    assert len(t.lr) == 160
    assert t.lr[0] == 1e-4
    steps = [s for s, _ in t.prune_events]
    assert steps == sorted(set(steps))
    assert min(steps) == 2 * 16 and max(steps) < 8 * 16
    assert t.prune_events[0][1] == 0.70
    assert t.prune_events[-1][1] == 0.9


def test_downstream_30ep_timeline():
    t = compile_timeline(load_bundled("downstream-30ep"), steps_per_epoch=16)
    assert t.num_lr_cycles == 15
    assert len(t.prune_events) == 260


def test_upstream_timeline():
    t = compile_timeline(load_bundled("upstream-3ep"), steps_per_epoch=200)
    assert len(t.prune_events) == 200
    assert max(s for s, _ in t.prune_events) < 2 * 200
    assert t.num_lr_cycles == 6


def test_finetune_timeline_has_no_events():
    t = compile_timeline(load_bundled("upstream-finetune-8ep"), steps_per_epoch=16)
    assert t.prune_events == ()
    assert t.num_lr_cycles == 0
    assert t.lr[0] == 1.5e-5
    assert t.lr[-1] > 0


def test_timeline_lr_matches_cycle_structure():
    t = compile_timeline(load_bundled("downstream-10ep"), steps_per_epoch=16)
    cycle = 32
    for start in range(0, 160, cycle):
        assert t.lr[start] == 1e-4
        assert t.lr[start + cycle - 1] == 1e-6
        assert np.all(np.diff(t.lr[start:start + cycle]) < 0)


def test_timeline_rejects_incompatible_steps_per_epoch():
    with pytest.raises((RecipeError, ValueError)):
        compile_timeline(load_bundled("downstream-10ep"), steps_per_epoch=5)


def test_eval_steps_cover_epoch_ends_and_events():
    t = compile_timeline(load_bundled("downstream-10ep"), steps_per_epoch=16)
    evals = set(t.eval_steps)
    for epoch_end in range(15, 160, 16):
        assert epoch_end in evals
    for step, _ in t.prune_events:
        assert step in evals
    assert list(t.eval_steps) == sorted(evals)
