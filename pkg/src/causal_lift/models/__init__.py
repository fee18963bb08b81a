"""Built-in model files; resolve by name with builtin_model_path()."""

from importlib import resources


def builtin_model_names():
    root = resources.files(__name__)
    return sorted(p.name[: -len(".model")] for p in root.iterdir() if p.name.endswith(".model"))


def builtin_model_text(name):
    return resources.files(__name__).joinpath(f"{name}.model").read_text(encoding="utf-8")
