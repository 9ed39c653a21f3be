"""A small end-to-end CLI run shared by the CLI and acceptance tests."""
from pathlib import Path

from credkit.cli import main

SYNTH = ["--events", "3", "--fakes", "3", "--duration-s", "150", "--snr-list", "-2,10",
         "--min-gap-s", "2", "--families", "2", "--train-windows", "8", "--val-windows", "4"]


def run_pipeline(root: Path, seed: int = 7) -> dict[str, bytes]:
    """Run synth, train, detect and bench; return every output file's bytes."""
    root = Path(root)
    data, model, det, bench = (root / d for d in ("data", "model", "detect", "bench"))
    s = ["--seed", str(seed)]
    steps = [
        ["synth", *s, "--out-dir", str(data), *SYNTH],
        ["train", *s, "--out-dir", str(model), "--data-dir", str(data), "--epochs", "2", "--batch", "4"],
        ["detect", *s, "--out-dir", str(det), "--model", str(model / "model.cred"),
         "--waveform", str(data / "scene_10.csv")],
        ["bench", *s, "--out-dir", str(bench), "--model", str(model / "model.cred"),
         "--snr-list", "0,20", "--seeds", "1", "--events", "3", "--fakes", "3", "--duration-s", "150"],
    ]
    for argv in steps:
        code = main(argv)
        if code != 0:
            raise AssertionError(f"credkit {argv[0]} exited with {code}")
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}
