"""Smoke test for the `cafo` extension module.

Build first with `cargo build -p cafo-py --features extension-module` (or
`maturin develop -m crates/py/pyproject.toml`). The script imports an
installed `cafo` if there is one, otherwise it loads the shared library from
$CAFO_LIB or target/{release,debug}.
"""

import importlib.machinery
import importlib.util
import os
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def load_cafo():
    try:
        import cafo  # noqa: F401

        return cafo
    except ImportError:
        pass
    candidates = []
    if os.environ.get("CAFO_LIB"):
        candidates.append(Path(os.environ["CAFO_LIB"]))
    for profile in ("release", "debug"):
        for name in ("libcafo.so", "libcafo.dylib", "cafo.dll"):
            candidates.append(ROOT / "target" / profile / name)
    for path in candidates:
        if path.exists():
            loader = importlib.machinery.ExtensionFileLoader("cafo", str(path))
            spec = importlib.util.spec_from_file_location("cafo", str(path), loader=loader)
            module = importlib.util.module_from_spec(spec)
            loader.exec_module(module)
            sys.modules["cafo"] = module
            return module
    sys.exit("cafo extension not found; build crates/py first")


def check(cond, what):
    if not cond:
        sys.exit(f"FAIL {what}")
    print(f"ok   {what}")


def main():
    cafo = load_cafo()

    barn = cafo.Mask.rectangle(32, 32, (4, 4, 12, 20))
    check(barn.area() == 8 * 16, "rectangle area")
    check(barn.bbox() == (4, 4, 12, 20), "bounding box")

    size, counts = barn.to_coco()
    check(cafo.Mask.from_coco(size, counts) == barn, "COCO round-trip")
    check(cafo.Mask.from_rows(barn.to_rows()) == barn, "dense round-trip")

    f = cafo.functionals(barn, (4, 4, 12, 20))
    check(abs(f["containment"] - 1.0) < 1e-12 and abs(f["coverage"] - 1.0) < 1e-12, "functionals of a filled box")

    check(cafo.chamfer_distance(barn, barn) == 0.0, "chamfer of identical masks")
    shifted = cafo.Mask.rectangle(32, 32, (8, 4, 16, 20))
    check(0.0 < cafo.chamfer_distance(barn, shifted) < 1.0, "chamfer of shifted masks")

    barn_id = 0
    check(cafo.filter_indices([barn], [(4, 4, 12, 20)], [barn_id]) == [0], "filter keeps a clean barn")

    per_class, macro = cafo.evaluate([0, 1, 2, 3, 4], [0, 1, 2, 3, 4])
    check(macro == 1.0 and len(per_class) == len(cafo.class_names()), "evaluate")

    try:
        cafo.Mask.from_rows([[True], [True, False]])
        check(False, "ragged rows rejected")
    except ValueError:
        check(True, "ragged rows rejected")

    with tempfile.TemporaryDirectory() as tmp:
        manifest = cafo.synthesize(os.path.join(tmp, "data"), 60, seed=3)
        config = '{"train": {"epochs": 3}}'
        model, val_f1 = cafo.Model.train(manifest, config)
        check(len(val_f1) == 3, "training runs")
        path = os.path.join(tmp, "model.bin")
        model.save(path)
        reloaded = cafo.Model.load(path)
        a = model.predict(manifest, "test")
        b = reloaded.predict(manifest, "test")
        check(a == b and len(a) > 0, "save/load predictions agree")
        check(all(abs(sum(p) - 1.0) < 1e-9 for _, _, p in a), "probabilities sum to one")
        n = model.explain(manifest, os.path.join(tmp, "explain"), "test")
        check(n == len(a), "explain writes one entry per scene")

    print("smoke test passed")


if __name__ == "__main__":
    main()
