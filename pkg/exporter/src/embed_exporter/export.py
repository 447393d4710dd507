"""Forward-hook export: run a trained model over a dataset and capture the
activations of chosen layers, one embedding file per layer.

The exporter owns no math: it loads, hooks, forwards in eval mode under
no_grad, flattens each activation to (batch, -1) float32, and writes files.
Row i of every output embeds dataset row i.
"""

from __future__ import annotations

import importlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .formats import read_dataset, write_embeddings


class ExportError(Exception):
    pass


class IdentityModel(nn.Module):
    """Built-in pass-through model; its single hookable layer is "identity"."""

    def __init__(self):
        super().__init__()
        self.identity = nn.Identity()

    def forward(self, x):
        return self.identity(x)


def load_model(reference: str) -> nn.Module:
    """Resolve a model reference.

    Accepted forms: the literal "identity", a path to a pickled module saved
    with ``torch.save(model, path)``, or a "module.path:factory" dotted
    reference to a zero-argument callable returning an nn.Module.
    TorchScript archives are rejected: script modules cannot take the forward
    hooks the exporter relies on.
    """
    if reference == "identity":
        return IdentityModel()
    if ":" in reference and not Path(reference).exists():
        module_name, _, attr = reference.partition(":")
        try:
            factory = getattr(importlib.import_module(module_name), attr)
        except (ImportError, AttributeError) as exc:
            raise ExportError(f"cannot import model factory {reference!r}: {exc}") from exc
        model = factory()
        if not isinstance(model, nn.Module):
            raise ExportError(f"{reference!r} did not return a torch module")
        return model
    path = Path(reference)
    if not path.exists():
        raise ExportError(f"model reference {reference!r} is neither built-in, importable, nor a file")
    try:
        loaded = torch.load(str(path), map_location="cpu", weights_only=False)
    except Exception as exc:
        raise ExportError(
            f"cannot load a pickled module from {path}: {exc} "
            "(TorchScript archives are unsupported; save the full module with torch.save "
            "or pass a module.path:factory reference)"
        ) from exc
    if isinstance(loaded, torch.jit.ScriptModule):
        raise ExportError(
            f"{path} holds a TorchScript module, which cannot take activation hooks; "
            "save the full module with torch.save or pass a module.path:factory reference"
        )
    if not isinstance(loaded, nn.Module):
        raise ExportError(
            f"{path} holds {type(loaded).__name__}, not a torch module "
            "(state_dicts need their architecture; pass a module.path:factory reference)"
        )
    return loaded


def available_layers(model: nn.Module) -> list[str]:
    return [name for name, _ in model.named_modules() if name]


@dataclass
class ExportSpec:
    """What to run and where to write it."""

    model: str
    layers: list[str]
    dataset: Path
    out_dir: Path
    batch_size: int = 256

    def __post_init__(self):
        self.dataset = Path(self.dataset)
        self.out_dir = Path(self.out_dir)
        if not self.layers:
            raise ExportError("at least one --layer is required")
        if self.batch_size < 1:
            raise ExportError(f"batch size must be >= 1, got {self.batch_size}")


def _resolve_modules(model: nn.Module, layer_names: list[str]) -> dict[str, nn.Module]:
    modules = dict(model.named_modules())
    chosen = {}
    for name in layer_names:
        if name not in modules or not name:
            raise ExportError(
                f"unknown layer {name!r}; available layers: {', '.join(available_layers(model)) or '(none)'}"
            )
        chosen[name] = modules[name]
    return chosen


def compute_embeddings(
    model: nn.Module, X: np.ndarray, layer_names: list[str], batch_size: int = 256
) -> dict[str, np.ndarray]:
    """Activations of each named layer over all rows of X, order preserved."""
    model.eval()
    hooked = _resolve_modules(model, layer_names)
    captured: dict[str, list[np.ndarray]] = {name: [] for name in layer_names}
    handles = []

    def make_hook(name):
        def hook(_module, _inputs, output):
            if isinstance(output, (tuple, list)):
                output = output[0]
            arr = output.detach().to(torch.float32).reshape(output.shape[0], -1)
            captured[name].append(arr.cpu().numpy())

        return hook

    for name, module in hooked.items():
        handles.append(module.register_forward_hook(make_hook(name)))
    try:
        with torch.no_grad():
            for start in range(0, len(X), batch_size):
                model(torch.from_numpy(X[start : start + batch_size]).to(torch.float32))
    finally:
        for handle in handles:
            handle.remove()

    out = {}
    for name in layer_names:
        if not captured[name]:
            raise ExportError(f"layer {name!r} produced no activations during the forward pass")
        table = np.concatenate(captured[name], axis=0)
        if table.shape[0] != len(X):
            raise ExportError(
                f"layer {name!r} emitted {table.shape[0]} rows for {len(X)} inputs; "
                "layers that fire more than once per forward pass are not exportable"
            )
        out[name] = table
    return out


def _file_name(layer_name: str) -> str:
    return layer_name.replace("/", "_").replace("\\", "_") + ".emb"


def export(spec: ExportSpec) -> dict[str, Path]:
    """Write one EmbeddingFile per layer; returns {layer: written path}."""
    X, _labels = read_dataset(spec.dataset)
    model = load_model(spec.model)
    tables = compute_embeddings(model, X, spec.layers, spec.batch_size)
    spec.out_dir.mkdir(parents=True, exist_ok=True)
    written = {}
    for name, table in tables.items():
        path = spec.out_dir / _file_name(name)
        write_embeddings(path, name, table)
        written[name] = path
    return written
