import random
from pathlib import Path

import pytest

from treenas.configtree import ArchNode, ArchTree, node
from treenas.mining import ModuleDB, build_db, mine_source

FIXTURES = Path(__file__).parent / "fixtures"
CORPUS_DIR = FIXTURES / "corpus"
CORPUS_FILE_NAMES = ["backbones.py", "attention.py", "blocks_extra.py"]

FIXTURE_CONFIGS = {
    "imagenet16": FIXTURES / "arch_imagenet16.cfg",
    "cifar10": FIXTURES / "arch_cifar10.cfg",
    "cifar100": FIXTURES / "arch_cifar100.cfg",
}


def fixture_text(name: str) -> str:
    return FIXTURE_CONFIGS[name].read_text()


@pytest.fixture
def imagenet16_text() -> str:
    return fixture_text("imagenet16")


@pytest.fixture
def cifar100_text() -> str:
    return fixture_text("cifar100")


def build_corpus_db() -> ModuleDB:
    records = []
    for fname in CORPUS_FILE_NAMES:
        text = (CORPUS_DIR / fname).read_text()
        records.extend(mine_source(text, origin_prefix=f"fixturelib.{fname[:-3]}"))
    return build_db(records)


@pytest.fixture(scope="session")
def corpus_db() -> ModuleDB:
    return build_corpus_db()


def build_engine_db() -> ModuleDB:
    """Corpus records plus the top-level classifier wrapper for full-loop tests."""
    records = []
    for fname in CORPUS_FILE_NAMES:
        text = (CORPUS_DIR / fname).read_text()
        records.extend(mine_source(text, origin_prefix=f"fixturelib.{fname[:-3]}"))
    extra = (FIXTURES / "corpus_extra" / "classifier.py").read_text()
    records.extend(mine_source(extra, origin_prefix="fixturelib.classifier"))
    return build_db(records)


@pytest.fixture(scope="session")
def engine_db() -> ModuleDB:
    return build_engine_db()


def make_small_tree() -> ArchTree:
    """A compact architecture whose module types all resolve in the corpus DB."""
    return ArchTree(node(
        type="ImageClassifier",
        backbone=node(type="NAS_Backbone", layer_cfgs=[
            node(type="ConvBlock", in_channels=3, out_channels=16,
                 kernel_size=3, stride=1, bias=False),
            node(type="BasicBlock", in_channels=16, out_channels=16,
                 expansion=1, drop_path_rate=0.15),
            node(type="InvertedResidual", in_channels=16, out_channels=32,
                 mid_channels=64, kernel_size=3, stride=2),
            node(type="MBConvBlock", in_channels=32, out_channels=32,
                 expand_ratio=4, drop_path=0.1),
            node(type="GatedFuse", channels=32, gate_bias=0.5),
        ]),
        neck=node(type="GapNeck"),
        head=node(type="SplitHead", channels=32, num_classes=10),
    ))


@pytest.fixture
def small_tree() -> ArchTree:
    return make_small_tree()


def random_value(rng: random.Random, depth: int) -> object:
    """Random config value for round-trip property tests."""
    kinds = ["int", "float", "bool", "none", "str"]
    if depth > 0:
        kinds += ["list", "tuple", "node", "node"]
    kind = rng.choice(kinds)
    if kind == "int":
        return rng.randint(-1000, 1000)
    if kind == "float":
        return rng.choice([0.0, 0.5, 1e-05, 3.25, -7.125, 2e8])
    if kind == "bool":
        return rng.random() < 0.5
    if kind == "none":
        return None
    if kind == "str":
        alphabet = "abcXYZ_09 '\"\\#=,()[]"
        return "".join(rng.choice(alphabet) for _ in range(rng.randint(0, 8)))
    if kind in ("list", "tuple"):
        items = [random_value(rng, depth - 1) for _ in range(rng.randint(0, 4))]
        return items if kind == "list" else tuple(items)
    entries = {}
    if rng.random() < 0.7:
        entries["type"] = rng.choice(["ConvModule", "BasicBlock", "Identity", "MyReshape"])
    for i in range(rng.randint(0, 4)):
        entries[f"k{i}"] = random_value(rng, depth - 1)
    return ArchNode(entries)


def random_tree(rng: random.Random, depth: int = 4) -> ArchTree:
    root = node(
        type=rng.choice(["ImageClassifier", "Segmentor"]),
        backbone=random_value(rng, depth),
        extras=[random_value(rng, depth - 1) for _ in range(rng.randint(0, 3))],
    )
    return ArchTree(root)
