import argparse
import os


def parser(description: str, out_default: str) -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(description=description)
    ap.add_argument("--out", default=out_default, help="output directory")
    ap.add_argument("--seed", type=int, default=0)
    return ap


def save(out_dir: str, name: str, text: str) -> str:
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, name)
    with open(path, "w") as fh:
        fh.write(text)
    print(f"wrote {path}")
    return path
