"""Request handling: dry-run profiling and train/evaluate runs."""

from __future__ import annotations

import json
import math
from importlib import resources

import torch
import torch.nn as nn

from .config_text import ConfigTextError, parse_model_config
from .profiler import measure
from .registry import BuildError, build
from . import modules as _modules  # noqa: F401  (populates the registry)
from . import specials as _specials  # noqa: F401

DEFAULT_INPUT_SHAPE = (3, 32, 32)

RECIPE_BY_DATASET = {
    "synthetic": "synthetic",
    "cifar10": "nasbench_cifar",
    "cifar100": "nasbench_cifar",
    "imagenet16-120": "nasbench_imagenet16",
    "imagenet100": "imagenet100_1ep",
    "imagenet100-100ep": "imagenet100_100ep",
}


def load_recipe(name: str) -> dict:
    path = resources.files("archeval").joinpath(f"recipes/{name}.json")
    return json.loads(path.read_text())


def build_model(config_text: str) -> nn.Module:
    model_cfg = parse_model_config(config_text)
    return build(model_cfg)


def handle_dry_run(request: dict) -> dict:
    input_shape = tuple(request.get("input_shape") or DEFAULT_INPUT_SHAPE)
    try:
        model = build_model(request["config_text"])
        params, flops = measure(model, input_shape)
    except (ConfigTextError, BuildError) as exc:
        return {"ok": False, "error": str(exc), "params": None, "flops": None,
                "metric": None}
    except RuntimeError as exc:  # shape mismatches and other runtime failures
        return {"ok": False, "error": str(exc), "params": None, "flops": None,
                "metric": None}
    return {"ok": True, "error": None, "params": params, "flops": flops,
            "metric": None}


def _synthetic_batches(input_shape, num_classes, size, batch_size, generator):
    images = torch.randn(size, *input_shape, generator=generator)
    labels = torch.randint(0, num_classes, (size,), generator=generator)
    for start in range(0, size, batch_size):
        yield images[start:start + batch_size], labels[start:start + batch_size]


def _make_optimizer(model, recipe):
    kind = recipe.get("optimizer", "sgd").lower()
    lr = recipe.get("lr", 0.01)
    weight_decay = recipe.get("weight_decay", 0.0)
    if kind == "adamw":
        betas = tuple(recipe.get("betas", (0.9, 0.999)))
        return torch.optim.AdamW(model.parameters(), lr=lr, betas=betas,
                                 weight_decay=weight_decay)
    return torch.optim.SGD(model.parameters(), lr=lr,
                           momentum=recipe.get("momentum", 0.0),
                           nesterov=recipe.get("nesterov", False),
                           weight_decay=weight_decay)


def _num_classes(model) -> int:
    head = getattr(model, "head", None)
    return getattr(head, "num_classes", None) or 10


def handle_train(request: dict) -> dict:
    input_shape = tuple(request.get("input_shape") or DEFAULT_INPUT_SHAPE)
    dataset = request.get("dataset", "synthetic")
    epochs = int(request.get("epochs", 1))
    seed = int(request.get("seed", 0))
    if dataset not in RECIPE_BY_DATASET:
        return {"ok": False, "error": f"unknown dataset {dataset!r}", "params": None,
                "flops": None, "metric": None}
    if dataset != "synthetic":
        return {"ok": False,
                "error": f"dataset {dataset!r} requires local data which is not "
                         "provisioned in this environment; use 'synthetic'",
                "params": None, "flops": None, "metric": None}

    recipe = load_recipe(RECIPE_BY_DATASET[dataset])
    try:
        torch.manual_seed(seed)  # weight init must be seeded for reproducible runs
        model = build_model(request["config_text"])
        params, flops = measure(model, input_shape)
        metric = _train_synthetic(model, recipe, input_shape, epochs, seed)
    except (ConfigTextError, BuildError, RuntimeError) as exc:
        return {"ok": False, "error": str(exc), "params": None, "flops": None,
                "metric": None}
    return {"ok": True, "error": None, "params": params, "flops": flops,
            "metric": metric}


def _train_synthetic(model, recipe, input_shape, epochs, seed) -> float:
    torch.manual_seed(seed)
    generator = torch.Generator().manual_seed(seed)
    num_classes = _num_classes(model)
    batch_size = recipe.get("batch_size", 32)
    train_size = recipe.get("train_size", 128)
    val_size = recipe.get("val_size", 64)
    steps_cap = recipe.get("steps_per_epoch", 8)

    trainable = any(p.requires_grad for p in model.parameters())
    optimizer = _make_optimizer(model, recipe) if trainable else None
    loss_fn = getattr(getattr(model, "head", None), "loss", None)
    smoothing = recipe.get("label_smoothing", 0.0)

    model.train()
    for _ in range(max(1, epochs) if trainable else 0):
        steps = 0
        for images, labels in _synthetic_batches(input_shape, num_classes,
                                                 train_size, batch_size, generator):
            optimizer.zero_grad()
            logits = model(images)
            if loss_fn is not None:
                loss = loss_fn(logits, labels)
            else:
                loss = nn.functional.cross_entropy(logits, labels,
                                                   label_smoothing=smoothing)
            if not math.isfinite(loss.item()):
                raise RuntimeError("training diverged to a non-finite loss")
            loss.backward()
            optimizer.step()
            steps += 1
            if steps >= steps_cap:
                break

    model.eval()
    correct = total = 0
    with torch.no_grad():
        for images, labels in _synthetic_batches(input_shape, num_classes,
                                                 val_size, batch_size, generator):
            predictions = model(images).argmax(dim=1)
            correct += (predictions == labels).sum().item()
            total += labels.numel()
    return 100.0 * correct / max(total, 1)


def handle_request(request: dict) -> dict:
    """Dispatch one request; any escaped exception becomes an ok=false reply."""
    try:
        mode = request.get("mode")
        if mode == "dry_run":
            return handle_dry_run(request)
        if mode == "train":
            return handle_train(request)
        return {"ok": False, "error": f"unknown mode {mode!r}", "params": None,
                "flops": None, "metric": None}
    except Exception as exc:  # the worker must survive every request
        return {"ok": False, "error": f"{type(exc).__name__}: {exc}", "params": None,
                "flops": None, "metric": None}
