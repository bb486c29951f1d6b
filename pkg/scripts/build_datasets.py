"""Rebuild the bundled CG and SG datasets from PyPI artifacts.

Credit-g (UCI ``german.data``) ships inside the ``responsibly`` wheel and the
image-segmentation table ships inside the ``river`` sdist. Both are downloaded
with ``pip download`` and rewritten as CSV + schema JSON under
``src/tabkan/data``.

    python scripts/build_datasets.py
"""

import csv
import io
import json
import subprocess
import sys
import tarfile
import tempfile
import zipfile
from pathlib import Path

OUT = Path(__file__).resolve().parents[1] / "src" / "tabkan" / "data"

GERMAN_COLUMNS = [
    ("checking_status", "categorical"),
    ("duration", "numerical"),
    ("credit_history", "categorical"),
    ("purpose", "categorical"),
    ("credit_amount", "numerical"),
    ("savings_status", "categorical"),
    ("employment", "categorical"),
    ("installment_commitment", "numerical"),
    ("personal_status", "categorical"),
    ("other_parties", "categorical"),
    ("residence_since", "numerical"),
    ("property_magnitude", "categorical"),
    ("age", "numerical"),
    ("other_payment_plans", "categorical"),
    ("housing", "categorical"),
    ("existing_credits", "numerical"),
    ("job", "categorical"),
    ("num_dependents", "numerical"),
    ("own_telephone", "binary"),
    ("foreign_worker", "binary"),
]


def _download(spec, dest):
    subprocess.run(
        [sys.executable, "-m", "pip", "download", "--no-deps", "-q", spec, "-d", str(dest)],
        check=True,
    )


def _write(name, header, rows, schema):
    OUT.mkdir(parents=True, exist_ok=True)
    with open(OUT / f"{name}.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    with open(OUT / f"{name}.schema.json", "w") as fh:
        json.dump(schema, fh, indent=2)
        fh.write("\n")


def build_credit_g(tmp):
    _download("responsibly==0.1.2", tmp)
    wheel = next(Path(tmp).glob("responsibly-*.whl"))
    raw = zipfile.ZipFile(wheel).read("responsibly/dataset/german/german.data").decode()
    rows = []
    for line in raw.splitlines():
        parts = line.split()
        label = {"1": "good", "2": "bad"}[parts[-1]]
        rows.append(parts[:-1] + [label])
    columns = []
    for j, (name, kind) in enumerate(GERMAN_COLUMNS):
        col = {"name": name, "kind": kind}
        if kind != "numerical":
            col["categories"] = sorted({r[j] for r in rows})
        columns.append(col)
    columns.append({"name": "class", "kind": "label", "categories": ["bad", "good"]})
    header = [c["name"] for c in columns]
    _write("credit_g", header, rows, {"columns": columns, "missing": "?"})


def build_segment(tmp):
    _download("river==0.23.0", tmp)
    sdist = next(Path(tmp).glob("river-*.tar.gz"))
    with tarfile.open(sdist) as tf:
        member = next(m for m in tf.getmembers() if m.name.endswith("datasets/segment.csv.zip"))
        blob = tf.extractfile(member).read()
    z = zipfile.ZipFile(io.BytesIO(blob))
    text = z.read(z.namelist()[0]).decode()
    reader = list(csv.reader(io.StringIO(text)))
    header, rows = reader[0], reader[1:]
    columns = [{"name": h, "kind": "numerical"} for h in header[:-1]]
    columns.append(
        {"name": header[-1], "kind": "label", "categories": sorted({r[-1] for r in rows})}
    )
    _write("segment", header, rows, {"columns": columns, "missing": "?"})


if __name__ == "__main__":
    with tempfile.TemporaryDirectory() as tmp:
        build_credit_g(tmp)
    with tempfile.TemporaryDirectory() as tmp:
        build_segment(tmp)
    print(f"wrote datasets to {OUT}")
