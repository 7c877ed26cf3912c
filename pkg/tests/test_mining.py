import importlib.util
from pathlib import Path

import pytest

from treenas.configtree import TODO_MARKER
from treenas.errors import ParseError, UnknownModule
from treenas.mining import (
    ModuleDB,
    build_db,
    builtin_specials,
    db_from_json,
    db_to_json,
    get_code,
    get_default,
    mine_source,
    retrieve_compatible,
)

CORPUS = Path(__file__).parent / "fixtures" / "corpus"
CORPUS_FILES = ["backbones.py", "attention.py", "blocks_extra.py"]


def mine_corpus():
    records = []
    for fname in CORPUS_FILES:
        text = (CORPUS / fname).read_text()
        records.extend(mine_source(text, origin_prefix=f"fixturelib.{fname[:-3]}"))
    return records


@pytest.fixture(scope="module")
def corpus_db() -> ModuleDB:
    return build_db(mine_corpus())


# Hand-derived oracle for the 15-class corpus: name -> (params, in_arity, out_arity)
EXPECTED = {
    "ConvBlock": ([("in_channels", TODO_MARKER), ("out_channels", TODO_MARKER),
                   ("kernel_size", 3), ("stride", 1), ("bias", False)], 1, 1),
    "BasicBlock": ([("in_channels", TODO_MARKER), ("out_channels", TODO_MARKER),
                    ("expansion", 1), ("drop_path_rate", 0.15),
                    ("act_layer", TODO_MARKER)], 1, 1),
    "Bottleneck": ([("in_channels", TODO_MARKER), ("out_channels", TODO_MARKER),
                    ("mid_channels", None)], 1, 1),
    "DualPath": ([("channels", TODO_MARKER), ("ratio", 0.25)], 2, 2),
    "SeqStack": ([("planes", [16, 32]), ("repeats", 2)], 1, 1),
    "GapNeck": ([], 1, 1),
    "BottleneckAttn": ([("dim", TODO_MARKER), ("dim_out", None), ("feat_size", None),
                        ("stride", 1), ("num_heads", 4), ("dim_head", None),
                        ("qk_ratio", 1.0), ("qkv_bias", False),
                        ("scale_pos_embed", False)], 1, 1),
    "InvertedResidual": ([("in_channels", TODO_MARKER), ("out_channels", TODO_MARKER),
                          ("mid_channels", TODO_MARKER), ("kernel_size", 3),
                          ("stride", 1), ("se_cfg", None),
                          ("with_expand_conv", True)], 1, 1),
    "GatedFuse": ([("channels", TODO_MARKER), ("gate_bias", 0.5)], 1, 1),
    "SplitHead": ([("channels", TODO_MARKER), ("num_classes", 10)], 1, 2),
    "InvertedResidual_2": ([("in_channels", TODO_MARKER), ("out_channels", TODO_MARKER),
                            ("expand_ratio", 4)], 1, 1),
    "MBConvBlock": ([("in_channels", TODO_MARKER), ("out_channels", TODO_MARKER),
                     ("expand_ratio", 4), ("drop_path", 0.0),
                     ("conv_order", ("expand", "depthwise", "project"))], 1, 1),
    "TokenMixer": ([("dim", TODO_MARKER), ("ratio", 0.5)], 2, 1),
    "NoForward": ([("size", 8)], 1, 1),
    "WeirdReturns": ([("channels", TODO_MARKER)], 1, 2),
}


class TestMineSource:
    def test_corpus_record_count(self):
        assert len(mine_corpus()) == 15

    def test_corpus_names_suffixing_defaults_arities(self, corpus_db):
        assert set(corpus_db.records) == set(EXPECTED)
        for name, (params, in_a, out_a) in EXPECTED.items():
            rec = corpus_db.records[name]
            assert list(rec.params) == [tuple(p) for p in params], name
            assert rec.forward_in_arity == in_a, name
            assert rec.forward_out_arity == out_a, name

    def test_empty_source(self):
        assert mine_source("", "lib.empty") == []

    def test_transitive_inheritance_within_file(self):
        src = (
            "class A(Module):\n    def forward(self, x):\n        return x\n\n"
            "class B(A):\n    def forward(self, x):\n        return x\n\n"
            "class C(object):\n    pass\n"
        )
        names = [r.name for r in mine_source(src, "lib.m")]
        assert names == ["A", "B"]

    def test_origin_is_prefix_plus_class_name(self):
        recs = mine_source("class A(nn.Module):\n    pass\n", "mylib.sub")
        assert recs[0].origin == "mylib.sub.A"

    def test_params_without_default_become_todo(self):
        src = ("class M(nn.Module):\n"
               "    def __init__(self, ch, k=3):\n        pass\n"
               "    def forward(self, x):\n        return x\n")
        rec = mine_source(src, "lib.m")[0]
        assert rec.params == (("ch", TODO_MARKER), ("k", 3))

    def test_malformed_source_reports_position(self):
        with pytest.raises(ParseError) as exc:
            mine_source("class A(\n", "lib.m")
        assert exc.value.line >= 1

    def test_mining_is_deterministic(self):
        text = (CORPUS / "backbones.py").read_text()
        a = build_db(mine_source(text, "lib.b"))
        b = build_db(mine_source(text, "lib.b"))
        assert db_to_json(a) == db_to_json(b)

    def test_record_source_re_mines_to_equal_record(self, corpus_db):
        # Snippets are self-contained given the DB's known module names.
        known = set(corpus_db.records) | {"Module", "nn.Module", "torch.nn.Module", "BaseModule"}
        for rec in corpus_db.records.values():
            prefix, _, base_name = rec.origin.rpartition(".")
            remined = mine_source(rec.source, prefix, base_names=known)
            assert len(remined) == 1, rec.name
            again = remined[0]
            assert again.origin == rec.origin
            assert again.params == rec.params
            assert again.arity == rec.arity
            assert again.source == rec.source

    def test_last_return_decides_out_arity(self):
        src = ("class M(nn.Module):\n"
               "    def forward(self, x):\n"
               "        if x is None:\n"
               "            return x, x, x\n"
               "        return x\n")
        assert mine_source(src, "lib.m")[0].forward_out_arity == 1

    def test_nested_function_returns_ignored(self):
        src = ("class M(nn.Module):\n"
               "    def forward(self, x):\n"
               "        def helper(v):\n"
               "            return v, v\n"
               "        return helper(x)[0]\n")
        assert mine_source(src, "lib.m")[0].forward_out_arity == 1

    def test_optional_none_inputs_not_counted(self):
        src = ("class M(nn.Module):\n"
               "    def forward(self, x, mask=None, scale=2):\n"
               "        return x\n")
        # mask is an optional input; scale has a non-None default and counts
        assert mine_source(src, "lib.m")[0].forward_in_arity == 2


class TestBuildDb:
    def test_collision_suffixing_order(self):
        src = "class InvertedResidual(nn.Module):\n    def forward(self, x):\n        return x\n"
        first = mine_source(src, "lib.a")[0]
        second = mine_source(src, "lib.b")[0]
        db = build_db([first, second])
        assert list(db.records) == ["InvertedResidual", "InvertedResidual_2"]
        assert db.records["InvertedResidual"].origin == "lib.a.InvertedResidual"
        assert db.records["InvertedResidual_2"].origin == "lib.b.InvertedResidual"

    def test_empty_records_gives_specials_only(self):
        db = build_db([])
        assert not db.records
        assert set(db.specials) == {"NAS_Backbone", "SequentialWithConfig",
                                    "ParallelWithConfig", "MyReshape", "Identity"}
        for name in db.specials:
            assert db.lookup(name).name == name

    def test_corpus_db_size_and_total_lookup(self, corpus_db):
        assert len(corpus_db) == 15 + len(builtin_specials())
        for name in corpus_db.names:
            corpus_db.lookup(name)

    def test_mined_name_colliding_with_special_is_suffixed(self):
        src = "class Identity(nn.Module):\n    def forward(self, x):\n        return x\n"
        db = build_db(mine_source(src, "lib.m"))
        assert "Identity_2" in db.records
        assert db.lookup("Identity").origin == "nas_special_modules.Identity"


class TestDbOperations:
    def test_get_code_single(self, corpus_db):
        out = get_code(["BasicBlock"], corpus_db)
        assert out == corpus_db.records["BasicBlock"].source

    def test_get_code_concatenates_in_request_order(self, corpus_db):
        out = get_code(["GapNeck", "ConvBlock"], corpus_db)
        expected = (corpus_db.records["GapNeck"].source + "\n\n"
                    + corpus_db.records["ConvBlock"].source)
        assert out == expected

    def test_get_code_unknown(self, corpus_db):
        with pytest.raises(UnknownModule):
            get_code(["Nope"], corpus_db)

    def test_get_default_order_and_todo(self, corpus_db):
        d = get_default("ConvBlock", corpus_db)
        assert list(d.items()) == [("in_channels", TODO_MARKER), ("out_channels", TODO_MARKER),
                                   ("kernel_size", 3), ("stride", 1), ("bias", False)]

    def test_get_default_empty(self, corpus_db):
        assert get_default("GapNeck", corpus_db) == {}

    def test_get_default_bottleneck_attn_matches_usage_keys(self, corpus_db):
        # Keys as used in the discovered-architecture fixtures.
        assert list(get_default("BottleneckAttn", corpus_db)) == [
            "dim", "dim_out", "feat_size", "stride", "num_heads",
            "dim_head", "qk_ratio", "qkv_bias", "scale_pos_embed"]

    def test_retrieve_compatible_matches_seed_arity(self, corpus_db):
        got = retrieve_compatible(["ConvBlock"], corpus_db)
        assert got == sorted(n for n, r in corpus_db.records.items()
                             if r.arity == (1, 1) and n != "ConvBlock")

    def test_retrieve_compatible_excludes_seeds(self, corpus_db):
        all_11 = [n for n, r in corpus_db.records.items() if r.arity == (1, 1)]
        assert retrieve_compatible(all_11, corpus_db) == []

    def test_retrieve_compatible_no_match(self, corpus_db):
        assert retrieve_compatible(["DualPath"], corpus_db) == []

    def test_retrieve_compatible_brute_force_property(self, corpus_db):
        import itertools
        names = list(corpus_db.records)
        for seeds in itertools.combinations(names, 2):
            got = retrieve_compatible(list(seeds), corpus_db)
            arities = {corpus_db.records[s].arity for s in seeds}
            for name in got:
                assert name not in seeds
                assert corpus_db.records[name].arity in arities
            for name in names:
                if name not in seeds and corpus_db.records[name].arity in arities:
                    assert name in got


class TestSerialization:
    def test_round_trip_identity(self, corpus_db):
        text = db_to_json(corpus_db)
        again = db_from_json(text)
        assert db_to_json(again) == text
        assert again.records == corpus_db.records

    def test_tuple_defaults_survive(self, corpus_db):
        again = db_from_json(db_to_json(corpus_db))
        order = dict(again.records["MBConvBlock"].params)["conv_order"]
        assert order == ("expand", "depthwise", "project")
        assert isinstance(order, tuple)

    def test_bad_version_rejected(self):
        with pytest.raises(ValueError):
            db_from_json('{"records": [], "version": 99}')


@pytest.mark.integration
@pytest.mark.parametrize("library,expected", [
    ("torch", 167), ("mmcv", 107), ("mmpretrain", 467), ("timm", 681)])
def test_mining_installed_library_counts(library, expected):
    """Optional: mine a pinned library tree; counts within +/-10%.

    Requires torch 2.9.0 / mmcv 2.1.0 / mmpretrain 1.2.0 / timm 1.0.19 to be
    installed; skipped otherwise (the counts are version-pinned).
    """
    pins = {"torch": "2.9.0", "mmcv": "2.1.0", "mmpretrain": "1.2.0", "timm": "1.0.19"}
    spec = importlib.util.find_spec(library)
    if spec is None or not spec.submodule_search_locations:
        pytest.skip(f"{library} not installed")
    module = importlib.import_module(library)
    if getattr(module, "__version__", "") != pins[library]:
        pytest.skip(f"{library} version is not {pins[library]}")
    root = Path(spec.submodule_search_locations[0])
    records = []
    for path in sorted(root.rglob("*.py")):
        rel = path.relative_to(root.parent).with_suffix("")
        prefix = ".".join(rel.parts)
        try:
            records.extend(mine_source(path.read_text(errors="replace"), prefix))
        except ParseError:
            continue
    assert abs(len(records) - expected) <= 0.10 * expected


class TestArityHeuristics:
    def test_star_args_ignored_for_arity(self):
        src = ("class M(nn.Module):\n"
               "    def forward(self, *feats, **kwargs):\n"
               "        return feats[0]\n")
        rec = mine_source(src, "lib.m")[0]
        assert rec.forward_in_arity == 0
        assert rec.forward_out_arity == 1

    def test_keyword_only_forward_inputs_counted(self):
        src = ("class M(nn.Module):\n"
               "    def forward(self, x, *, context):\n"
               "        return x\n")
        assert mine_source(src, "lib.m")[0].forward_in_arity == 2
