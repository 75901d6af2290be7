"""Lets the smoke tests run against either an installed wheel or the
module built by the plain CMake tree (no pip install required)."""

import importlib.util
import os
import sys
from pathlib import Path


def _ensure_module():
    try:
        import evplab._core  # noqa: F401

        return
    except ImportError:
        pass

    root = Path(__file__).resolve().parents[2]
    sys.path.insert(0, str(root / "python"))

    candidates = []
    env_dir = os.environ.get("EVPLAB_PYMODULE_DIR")
    if env_dir:
        candidates.append(Path(env_dir))
    candidates.append(root / "build" / "bindings")

    for cand in candidates:
        if not cand.is_dir():
            continue
        for so in sorted(cand.glob("_core*.so")):
            spec = importlib.util.spec_from_file_location("evplab._core", so)
            module = importlib.util.module_from_spec(spec)
            sys.modules["evplab._core"] = module
            spec.loader.exec_module(module)
            return


_ensure_module()
