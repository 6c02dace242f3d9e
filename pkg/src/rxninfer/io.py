"""Reading and writing network files, datasets, traces and reports."""

from __future__ import annotations

import csv
import hashlib
import io
from importlib import resources
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
import yaml

from .network import Prior, RateLaw, Reaction, ReactionNetwork, Species

BUNDLED = ("example1", "example2")


class SpecError(ValueError):
    """A spec or config document is malformed."""


def _prior(doc: Mapping | None, where: str) -> Prior | None:
    if doc is None:
        return None
    if "variance" not in doc or "mean" not in doc:
        raise SpecError(f"{where}: prior needs 'mean' and 'variance'")
    return Prior(float(doc["mean"]), float(doc["variance"]))


def network_from_dict(doc: Mapping[str, Any]) -> ReactionNetwork:
    try:
        species = [
            Species(
                name=str(s["name"]),
                initial_concentration=float(s.get("initial_concentration", 0.0)),
                observed=bool(s.get("observed", False)),
            )
            for s in doc["species"]
        ]
        reactions = []
        for r in doc["reactions"]:
            where = f"reaction {r.get('id')}"
            law = RateLaw(r.get("rate_law", "mass_action"))
            reactions.append(
                Reaction(
                    id=int(r["id"]),
                    reactants=tuple(r.get("reactants", ())),
                    products=tuple(r.get("products", ())),
                    enzymes=tuple(r.get("enzymes", ())),
                    reversible=bool(r.get("reversible", False)),
                    rate_law=law,
                    log10_k=float(r["log10_k"]),
                    log10_k_reverse=None if r.get("log10_k_reverse") is None else float(r["log10_k_reverse"]),
                    michaelis_constant=None
                    if r.get("michaelis_constant") is None
                    else float(r["michaelis_constant"]),
                    fixed=bool(r.get("fixed", True)),
                    prior=_prior(r.get("prior"), where),
                    reverse_prior=_prior(r.get("reverse_prior"), where),
                )
            )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, SpecError):
            raise
        raise SpecError(f"malformed network file: {exc!r}") from exc
    return ReactionNetwork(tuple(species), tuple(reactions), name=str(doc.get("name", "network")))


def network_to_dict(net: ReactionNetwork) -> dict:
    out = {"name": net.name, "species": [], "reactions": []}
    for s in net.species:
        entry = {"name": s.name, "initial_concentration": s.initial_concentration}
        if s.observed:
            entry["observed"] = True
        out["species"].append(entry)
    for r in net.reactions:
        entry: dict[str, Any] = {
            "id": r.id,
            "reactants": list(r.reactants),
            "products": list(r.products),
        }
        if r.enzymes:
            entry["enzymes"] = list(r.enzymes)
        entry["reversible"] = r.reversible
        entry["rate_law"] = r.rate_law.value
        entry["log10_k"] = r.log10_k
        if r.log10_k_reverse is not None:
            entry["log10_k_reverse"] = r.log10_k_reverse
        if r.michaelis_constant is not None:
            entry["michaelis_constant"] = r.michaelis_constant
        entry["fixed"] = r.fixed
        if r.prior is not None:
            entry["prior"] = {"mean": r.prior.mean, "variance": r.prior.variance}
        if r.reverse_prior is not None:
            entry["reverse_prior"] = {"mean": r.reverse_prior.mean, "variance": r.reverse_prior.variance}
        out["reactions"].append(entry)
    return out


def bundled_path(name: str) -> Path:
    """Path of a file shipped in the package ``data`` directory."""
    return Path(str(resources.files("rxninfer") / "data" / name))


def load_network(path: str | Path) -> ReactionNetwork:
    """Load a YAML network file; ``example1``/``example2`` name the bundled ones."""
    if str(path) in BUNDLED:
        path = bundled_path(f"{path}.yaml")
    with open(path) as fh:
        doc = yaml.safe_load(fh)
    if not isinstance(doc, Mapping):
        raise SpecError(f"{path}: expected a mapping at top level")
    return network_from_dict(doc)


def dump_network(net: ReactionNetwork, path: str | Path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(network_to_dict(net), fh, sort_keys=False)


# -- datasets ----------------------------------------------------------------


def write_dataset_csv(path: str | Path, times: np.ndarray, observations: np.ndarray, names: Sequence[str]) -> None:
    """``observations`` is time-major: row t holds the observed species in order."""
    obs = np.asarray(observations, dtype=float).reshape(len(times), len(names))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", *names])
        for t, row in zip(times, obs):
            w.writerow([repr(float(t)), *(repr(float(v)) for v in row)])


def read_dataset_csv(path: str | Path) -> tuple[np.ndarray, np.ndarray, list[str]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "time":
        raise SpecError(f"{path}: dataset header must start with 'time'")
    names = rows[0][1:]
    body = np.array([[float(x) for x in r] for r in rows[1:] if r], dtype=float)
    if body.size == 0:
        return np.empty(0), np.empty(0), names
    return body[:, 0].copy(), body[:, 1:].reshape(-1).copy(), names


def write_csv(path: str | Path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def csv_text(header: Sequence[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()
