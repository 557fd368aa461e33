"""
The command-line front end, driven from Python.

Every run writes CSV tables (17 significant digits) plus a manifest holding
the resolved configuration, versions and convergence flags. Exit code 1
means an optimizer did not converge; 2 means a bad configuration.
"""
import csv
import json
import pathlib
import subprocess
import sys
import tempfile

out = pathlib.Path(tempfile.mkdtemp())
small = ["--modes-per-site", "2", "--grid", "65", "--iterations", "2"]

def bosonrg(*args):
    cmd = [sys.executable, "-m", "bosonrg", *args]
    code = subprocess.run(cmd, capture_output=True, text=True)
    print("$ bosonrg", " ".join(args), "->", code.returncode)
    return code

bosonrg("dispersion", "--print-config", "--dim", "2")
bosonrg("ham-flow", *small, "--out", str(out / "flow"))
with open(out / "flow" / "ham_flow.csv") as fh:
    for row in csv.DictReader(fh):
        print(row["scheme"], row["tau"], row.get("delta_E"))

bosonrg("mera", "--scheme", "ER", "--iterations", "2", "--set", "extent=64",
        "--set", "state=product", "--out", str(out / "mera"))
print(open(out / "mera" / "mera_error.csv").read())
manifest = json.loads((out / "mera" / "manifest.json").read_text())
print("converged:", manifest["converged"], " outputs:", manifest["outputs"])

(out / "bad.cfg").write_text("mass = 0.1\nmodes_per_site = many\n")
print(bosonrg("dispersion", "--config", str(out / "bad.cfg")).stderr.strip())
