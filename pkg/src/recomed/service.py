"""HTTP JSON API serving recommendations from a loaded model artifact.

All endpoints live under /api/v1 and are pure functions of the loaded
artifact and the request body; POST /reload swaps in a new artifact
atomically, so every in-flight request observes exactly one consistent
(model, rules, fingerprint) triple.
"""

from __future__ import annotations

import hashlib
import logging
import threading
from dataclasses import dataclass
from pathlib import Path

from fastapi import FastAPI, Query, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from . import engine
from .engine import ClusterModel
from .errors import CandidateNotInPoolError, RecomedError, UnknownMedicineError
from .rules import RuleSet
from .util import normalize_name

logger = logging.getLogger(__name__)

_STATUS = {
    "bad_request": 400,
    "unknown_medicine": 404,
    "model_unavailable": 503,
    "internal": 500,
}


def _error(code: str, message: str, details=None) -> JSONResponse:
    return JSONResponse(
        status_code=_STATUS[code],
        content={"error": {"code": code, "message": message, "details": details}},
    )


@dataclass(frozen=True)
class _Snapshot:
    model: ClusterModel
    rules: RuleSet
    fingerprint: str
    path: str


class ServiceState:
    """Holds the current artifact; swap is atomic under a lock."""

    def __init__(self, model_path=None):
        self._lock = threading.Lock()
        self._snapshot: _Snapshot | None = None
        if model_path is not None:
            self.reload(model_path)

    @staticmethod
    def _load(path) -> _Snapshot:
        raw = Path(path).read_bytes()
        fingerprint = hashlib.sha256(raw).hexdigest()
        model, rules = engine.load_model(path)
        return _Snapshot(model=model, rules=rules, fingerprint=fingerprint, path=str(path))

    def reload(self, path) -> _Snapshot:
        """Load and swap in a new artifact; failure keeps the old one."""
        snapshot = self._load(path)
        with self._lock:
            self._snapshot = snapshot
        logger.info("model loaded: %s (%s)", path, snapshot.fingerprint[:12])
        return snapshot

    def snapshot(self) -> _Snapshot | None:
        return self._snapshot


class RecommendRequest(BaseModel):
    medicines: list[str] = Field(min_length=1)
    k: int = Field(default=10, ge=1)


class ExplainRequest(BaseModel):
    medicines: list[str] = Field(min_length=1)
    candidate: str


class ReloadRequest(BaseModel):
    path: str


def _resolve_names(model: ClusterModel, names: list[str]) -> tuple[set[int], list[str]]:
    by_norm: dict[str, list[int]] = {}
    for e in model.catalog:
        by_norm.setdefault(e.normalized_name, []).append(e.med_id)
    known: set[int] = set()
    unknown: list[str] = []
    for name in names:
        ids = by_norm.get(normalize_name(name))
        if ids:
            known.update(ids)
        else:
            unknown.append(name)
    return known, unknown


def _atc_badge(model: ClusterModel, med_id: int) -> str:
    ann = model.annotations.get(med_id)
    if ann is None or not ann.matched:
        return "unmatched"
    return "/".join(sorted({c[0] for c in ann.codes}))


def create_app(state: ServiceState) -> FastAPI:
    app = FastAPI(title="recomed", version="1")

    @app.exception_handler(RequestValidationError)
    async def _validation_handler(request: Request, exc: RequestValidationError):
        return _error("bad_request", "invalid request body", details=exc.errors())

    @app.exception_handler(RecomedError)
    async def _recomed_handler(request: Request, exc: RecomedError):
        return _error("internal", str(exc))

    def _current() -> _Snapshot | None:
        return state.snapshot()

    @app.get("/api/v1/health")
    def health():
        snap = _current()
        if snap is None:
            return _error("model_unavailable", "no model loaded")
        return {
            "status": "ok",
            "fingerprint": snap.fingerprint,
            "built_at": snap.model.built_at,
            "medicines": len(snap.model.catalog),
            "communities": len(snap.model.partition.communities),
        }

    @app.get("/api/v1/medicines")
    def medicines(q: str = Query(default=""), limit: int = Query(default=20, ge=1, le=200)):
        snap = _current()
        if snap is None:
            return _error("model_unavailable", "no model loaded")
        prefix = normalize_name(q)
        if not prefix:
            return {"medicines": []}
        hits = [
            {
                "med_id": e.med_id,
                "name": e.name,
                "atc_badge": _atc_badge(snap.model, e.med_id),
            }
            for e in snap.model.catalog
            if e.normalized_name.startswith(prefix)
        ]
        hits.sort(key=lambda h: h["name"].upper())
        return {"medicines": hits[:limit]}

    @app.post("/api/v1/recommend")
    def recommend(body: RecommendRequest):
        snap = _current()
        if snap is None:
            return _error("model_unavailable", "no model loaded")
        known, unknown = _resolve_names(snap.model, body.medicines)
        if not known:
            return _error("unknown_medicine", "no query medicine exists in the model",
                          details={"unknown": unknown})
        recs, _ = engine.recommend(snap.model, snap.rules, known, body.k)
        return {
            "fingerprint": snap.fingerprint,
            "recommendations": [
                r.to_dict() | {"atc_badge": _atc_badge(snap.model, r.med_id)}
                for r in recs
            ],
            "unknown": unknown,
        }

    @app.post("/api/v1/explain")
    def explain(body: ExplainRequest):
        snap = _current()
        if snap is None:
            return _error("model_unavailable", "no model loaded")
        known, unknown = _resolve_names(snap.model, body.medicines)
        if not known:
            return _error("unknown_medicine", "no query medicine exists in the model",
                          details={"unknown": unknown})
        cand_ids, cand_unknown = _resolve_names(snap.model, [body.candidate])
        if not cand_ids:
            return _error("unknown_medicine", "unknown candidate",
                          details={"unknown": cand_unknown})
        try:
            explanation = engine.explain(snap.model, snap.rules, known, min(cand_ids))
        except CandidateNotInPoolError as exc:
            return _error("bad_request", str(exc))
        doc = explanation.to_dict()
        names = {e.med_id: e.name for e in snap.model.catalog}
        for rule in doc["fired_rules"]:
            rule["antecedent_names"] = [names[m] for m in rule["antecedent"]]
            rule["consequent_names"] = [names[m] for m in rule["consequent"]]
        return {"fingerprint": snap.fingerprint, "explanation": doc}

    @app.get("/api/v1/clusters")
    def clusters():
        snap = _current()
        if snap is None:
            return _error("model_unavailable", "no model loaded")
        model = snap.model
        return {
            "fingerprint": snap.fingerprint,
            "communities": [
                {
                    "id": cid,
                    "size": len(members),
                    "members": [model.name_of(m) for m in members],
                }
                for cid, members in sorted(model.partition.communities.items())
            ],
            "outliers": {
                "size": len(model.outliers.med_ids),
                "members": [model.name_of(m) for m in sorted(model.outliers.med_ids)],
            },
        }

    @app.get("/api/v1/rules")
    def rules_endpoint(medicine: str):
        snap = _current()
        if snap is None:
            return _error("model_unavailable", "no model loaded")
        known, unknown = _resolve_names(snap.model, [medicine])
        if not known:
            return _error("unknown_medicine", "unknown medicine",
                          details={"unknown": unknown})
        names = {e.med_id: e.name for e in snap.model.catalog}
        touching = []
        for rid, rule in enumerate(snap.rules.rules):
            if known & (set(rule.antecedent) | set(rule.consequent)):
                touching.append(
                    {
                        "id": rid,
                        "antecedents": [names[m] for m in rule.antecedent],
                        "consequents": [names[m] for m in rule.consequent],
                        "support": rule.support,
                        "confidence": rule.confidence,
                        "lift": rule.lift,
                        "strength": rule.strength.value,
                    }
                )
        return {"fingerprint": snap.fingerprint, "rules": touching}

    @app.post("/api/v1/reload")
    def reload(body: ReloadRequest):
        try:
            snap = state.reload(body.path)
        except FileNotFoundError as exc:
            return _error("bad_request", f"model file not found: {exc}")
        except RecomedError as exc:
            return _error("bad_request", f"invalid model artifact: {exc}")
        except Exception as exc:  # keep serving the old model
            return _error("internal", f"reload failed: {exc}")
        return {"status": "reloaded", "fingerprint": snap.fingerprint}

    return app


def serve(model_path, host: str = "127.0.0.1", port: int = 8000, ui_dir=None) -> None:
    """Run the API with uvicorn; optionally mount a static UI at /."""
    import uvicorn

    state = ServiceState(model_path)
    app = create_app(state)
    if ui_dir:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")
    uvicorn.run(app, host=host, port=port, log_level="info")
