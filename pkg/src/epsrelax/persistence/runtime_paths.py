from __future__ import annotations

from pathlib import Path


def repo_root() -> Path:
    # <root>/src/epsrelax/persistence/runtime_paths.py
    return Path(__file__).resolve().parents[3]


def bundled_data_dir() -> Path:
    return repo_root() / "data"


def bundled_config_dir() -> Path:
    return bundled_data_dir() / "config"


def bundled_config_names() -> list[str]:
    cfg = bundled_config_dir()
    return sorted(p.stem for p in cfg.glob("*.json")) if cfg.exists() else []


def resolve_config_path(name_or_path: str | Path) -> Path:
    """
    An existing file path wins; otherwise a bare name (with or without .json) is looked up
    among the bundled configs under data/config.
    """
    p = Path(name_or_path)
    if p.is_file():
        return p
    candidate = bundled_config_dir() / (p.name if p.suffix == ".json" else f"{p.name}.json")
    if p.parent == Path(".") and candidate.is_file():
        return candidate
    msg = f"Config not found: {name_or_path}"
    names = bundled_config_names()
    if names:
        msg += "\n\nBundled configs:\n" + "\n".join(f" - {n}" for n in names)
    raise FileNotFoundError(msg)
