"""Line-oriented plant and design file formats (see docs/formats.md).

Both formats are versioned key=value documents; matrices are row-major with
';' between rows, and every float is serialized with 17 significant digits
so read/write round trips are bit-exact.
"""

import numpy as np

from . import expr
from .errors import PlantFileError
from .lipschitz import Region
from .synthesis import ObserverDesign, PlantModel

FORMAT_VERSION = "1"

PLANT_KEYS = {
    "format", "kind", "n", "m", "p", "q", "r",
    "A", "B", "C", "D", "H", "gamma",
    "region_lower", "region_upper", "region_samples", "transform",
}
DESIGN_KEYS = {
    "format", "kind", "theorem", "n", "p", "beta",
    "epsilon", "alpha", "xi", "zeta", "gamma_star", "mu_star",
    "L", "P", "verified",
}


def fmt_float(v) -> str:
    return f"{float(v):.17g}"


def fmt_matrix(M) -> str:
    M = np.atleast_2d(np.asarray(M, dtype=np.float64))
    return " ; ".join(" ".join(fmt_float(v) for v in row) for row in M)


def _parse_kv_lines(text):
    entries = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise PlantFileError(f"expected key=value, got {line!r}", lineno)
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key in entries:
            raise PlantFileError(f"duplicate key {key!r}", lineno)
        entries[key] = (value, lineno)
    return entries


class _Doc:
    def __init__(self, text, kind, known_keys):
        self.entries = _parse_kv_lines(text)
        if "format" not in self.entries:
            raise PlantFileError("missing format=1 header")
        if self.entries["format"][0] != FORMAT_VERSION:
            raise PlantFileError(
                f"unsupported format {self.entries['format'][0]!r}",
                self.entries["format"][1])
        got_kind = self.get_str("kind")
        if got_kind != kind:
            raise PlantFileError(f"expected kind={kind}, got {got_kind!r}",
                                 self.entries["kind"][1])
        for key, (_, lineno) in self.entries.items():
            base = key.rstrip("0123456789")
            if key not in known_keys and not (base == "phi" and base != key):
                raise PlantFileError(f"unknown key {key!r}", lineno)

    def __contains__(self, key):
        return key in self.entries

    def lineno(self, key):
        return self.entries[key][1]

    def get_str(self, key):
        if key not in self.entries:
            raise PlantFileError(f"missing required key {key!r}")
        return self.entries[key][0]

    def get_int(self, key):
        val, lineno = self.entries[key]
        try:
            return int(val)
        except ValueError:
            raise PlantFileError(f"{key} must be an integer, got {val!r}",
                                 lineno) from None

    def get_float(self, key):
        val, lineno = self.entries[key]
        try:
            return float(val)
        except ValueError:
            raise PlantFileError(f"{key} must be a number, got {val!r}",
                                 lineno) from None

    def get_matrix(self, key, rows, cols):
        val, lineno = self.entries[key]
        try:
            M = np.asarray([[float(v) for v in row.split()]
                            for row in val.split(";")])
        except ValueError:
            raise PlantFileError(f"{key}: non-numeric entry", lineno) from None
        if M.shape != (rows, cols):
            raise PlantFileError(
                f"{key}: expected {rows}x{cols}, got {M.shape[0]}x{M.shape[1]}",
                lineno)
        return M

    def get_vector(self, key, length):
        return self.get_matrix(key, 1, length).reshape(-1)


def parse_plant(text: str) -> PlantModel:
    doc = _Doc(text, "plant", PLANT_KEYS)
    n = doc.get_int("n")
    m = doc.get_int("m") if "m" in doc else 0
    p = doc.get_int("p")
    q = doc.get_int("q") if "q" in doc else 1
    r = doc.get_int("r") if "r" in doc else 1
    A = doc.get_matrix("A", n, n)
    C = doc.get_matrix("C", p, n)
    B = doc.get_matrix("B", n, q) if "B" in doc else None
    D = doc.get_matrix("D", p, q) if "D" in doc else None
    H = doc.get_matrix("H", r, n) if "H" in doc else None

    comps = []
    for i in range(1, n + 1):
        key = f"phi{i}"
        if key not in doc:
            raise PlantFileError(f"missing nonlinearity component {key}")
        text_i, lineno = doc.entries[key]
        try:
            comps.append(expr.parse(text_i, n, m))
        except Exception as err:
            raise PlantFileError(f"{key}: {err}", lineno) from None
    phi = expr.VectorField(tuple(comps), n=n, m=m)

    gamma = doc.get_float("gamma") if "gamma" in doc else None
    region = None
    if "region_lower" in doc or "region_upper" in doc:
        if not ("region_lower" in doc and "region_upper" in doc):
            raise PlantFileError("region needs both region_lower and region_upper")
        samples = (doc.get_int("region_samples")
                   if "region_samples" in doc else None)
        region = Region(
            doc.get_vector("region_lower", n),
            doc.get_vector("region_upper", n),
            **({"samples_per_axis": samples} if samples else {}),
        )
    transform = doc.get_matrix("transform", n, n) if "transform" in doc else None
    try:
        return PlantModel(A=A, C=C, B=B, D=D, H=H, phi=phi, gamma=gamma,
                          region=region, m=m, transform=transform)
    except Exception as err:
        raise PlantFileError(str(err)) from None


def load_plant(path) -> PlantModel:
    with open(path) as fh:
        return parse_plant(fh.read())


def dump_plant(plant: PlantModel) -> str:
    lines = [
        f"format={FORMAT_VERSION}",
        "kind=plant",
        f"n={plant.n}",
        f"m={plant.m}",
        f"p={plant.p}",
        f"q={plant.q}",
        f"r={plant.r}",
        f"A={fmt_matrix(plant.A)}",
        f"B={fmt_matrix(plant.B)}",
        f"C={fmt_matrix(plant.C)}",
        f"D={fmt_matrix(plant.D)}",
        f"H={fmt_matrix(plant.H)}",
    ]
    if plant.phi is not None:
        if not isinstance(plant.phi, expr.VectorField):
            raise PlantFileError(
                "only plain (expression-backed) nonlinearities can be saved")
        for i, comp in enumerate(plant.phi.components, start=1):
            lines.append(f"phi{i}={comp.to_text()}")
    else:
        lines.extend(f"phi{i}=0" for i in range(1, plant.n + 1))
    if plant.gamma is not None:
        lines.append(f"gamma={fmt_float(plant.gamma)}")
    if plant.region is not None:
        lines.append("region_lower=" + " ".join(
            fmt_float(v) for v in plant.region.lower))
        lines.append("region_upper=" + " ".join(
            fmt_float(v) for v in plant.region.upper))
        lines.append(f"region_samples={plant.region.samples_per_axis}")
    if plant.transform is not None:
        lines.append(f"transform={fmt_matrix(plant.transform)}")
    return "\n".join(lines) + "\n"


def parse_design(text: str) -> ObserverDesign:
    doc = _Doc(text, "design", DESIGN_KEYS)
    n = doc.get_int("n")
    p = doc.get_int("p")

    def opt(key):
        return doc.get_float(key) if key in doc else None

    return ObserverDesign(
        L=doc.get_matrix("L", n, p),
        P=doc.get_matrix("P", n, n),
        epsilon=doc.get_float("epsilon"),
        theorem=doc.get_str("theorem"),
        beta=doc.get_float("beta") if "beta" in doc else 0.0,
        alpha=opt("alpha"),
        xi=opt("xi"),
        zeta=opt("zeta"),
        gamma_star=opt("gamma_star"),
        mu_star=opt("mu_star"),
    )


def load_design(path) -> ObserverDesign:
    with open(path) as fh:
        return parse_design(fh.read())


def dump_design(design: ObserverDesign) -> str:
    n, p = design.L.shape
    lines = [
        f"format={FORMAT_VERSION}",
        "kind=design",
        f"theorem={design.theorem}",
        f"n={n}",
        f"p={p}",
        f"beta={fmt_float(design.beta)}",
        f"epsilon={fmt_float(design.epsilon)}",
    ]
    for key in ("alpha", "xi", "zeta", "gamma_star", "mu_star"):
        val = getattr(design, key)
        if val is not None:
            lines.append(f"{key}={fmt_float(val)}")
    lines.append(f"L={fmt_matrix(design.L)}")
    lines.append(f"P={fmt_matrix(design.P)}")
    verified = design.verification is not None and design.verification.passed
    lines.append(f"verified={int(verified)}")
    return "\n".join(lines) + "\n"


def save(path, text: str):
    with open(path, "w") as fh:
        fh.write(text)
