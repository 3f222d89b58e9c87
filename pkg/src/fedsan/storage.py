"""SQLite run ledger for FEDSAN experiments."""
from __future__ import annotations

import datetime as dt
import logging
from pathlib import Path
from typing import List, Optional, Sequence

from sqlalchemy import Boolean, DateTime, Float, ForeignKey, Integer, JSON, String, create_engine
from sqlalchemy.orm import DeclarativeBase, Mapped, mapped_column, sessionmaker

LOGGER = logging.getLogger(__name__)


class Base(DeclarativeBase):
    pass


class RunRecord(Base):
    __tablename__ = "runs"

    id: Mapped[int] = mapped_column(Integer, primary_key=True, autoincrement=True)
    config_hash: Mapped[str] = mapped_column(String, index=True)
    output_dir: Mapped[str] = mapped_column(String)
    attack_kind: Mapped[str] = mapped_column(String)
    defense: Mapped[bool] = mapped_column(Boolean)
    aggregator: Mapped[str] = mapped_column(String)
    accuracy: Mapped[float] = mapped_column(Float)
    asr: Mapped[Optional[float]] = mapped_column(Float, nullable=True)
    sanitization_precision: Mapped[Optional[float]] = mapped_column(Float, nullable=True)
    sanitization_recall: Mapped[Optional[float]] = mapped_column(Float, nullable=True)
    removed_count: Mapped[int] = mapped_column(Integer, default=0)
    summary: Mapped[dict] = mapped_column(JSON)
    created_at: Mapped[dt.datetime] = mapped_column(DateTime, default=dt.datetime.utcnow)


class RoundMetric(Base):
    __tablename__ = "round_metrics"

    id: Mapped[int] = mapped_column(Integer, primary_key=True, autoincrement=True)
    run_id: Mapped[int] = mapped_column(ForeignKey("runs.id"), index=True)
    round: Mapped[int] = mapped_column(Integer)
    accuracy: Mapped[float] = mapped_column(Float)
    asr: Mapped[Optional[float]] = mapped_column(Float, nullable=True)
    wall_ms: Mapped[float] = mapped_column(Float)


def create_storage(sqlite_path: str | Path, recreate: bool = False):
    Path(sqlite_path).parent.mkdir(parents=True, exist_ok=True)
    engine = create_engine(f"sqlite:///{sqlite_path}")
    if recreate:
        Base.metadata.drop_all(engine)
    Base.metadata.create_all(engine)
    Session = sessionmaker(bind=engine)
    LOGGER.info("Connected to SQLite ledger at %s", sqlite_path)
    return Session


def record_run(session_factory, summary: dict, rows: Sequence[dict]) -> int:
    """Store one run summary and its per-round rows; returns the run id."""

    final = summary["metrics"]
    config = summary["config"]
    session = session_factory()
    try:
        run = RunRecord(
            config_hash=summary["config_hash"],
            output_dir=str(config.get("output_dir")),
            attack_kind=config["attack"]["kind"],
            defense=bool(config["defense"]["enabled"]),
            aggregator=config["training"]["aggregator"],
            accuracy=final["accuracy"],
            asr=final["attack_success_rate"],
            sanitization_precision=final["sanitization_precision"],
            sanitization_recall=final["sanitization_recall"],
            removed_count=final["removed_count"],
            summary=summary,
        )
        session.add(run)
        session.flush()
        for row in rows:
            session.add(
                RoundMetric(
                    run_id=run.id,
                    round=row["round"],
                    accuracy=row["accuracy"],
                    asr=row["asr"],
                    wall_ms=row["wall_ms"],
                )
            )
        session.commit()
        return run.id
    finally:
        session.close()


def recent_runs(session_factory, limit: int = 10) -> List[RunRecord]:
    session = session_factory()
    try:
        return session.query(RunRecord).order_by(RunRecord.id.desc()).limit(limit).all()
    finally:
        session.close()


def round_metrics(session_factory, run_id: int) -> List[RoundMetric]:
    session = session_factory()
    try:
        return session.query(RoundMetric).filter(RoundMetric.run_id == run_id).order_by(RoundMetric.round).all()
    finally:
        session.close()


__all__ = [
    "create_storage",
    "record_run",
    "recent_runs",
    "round_metrics",
    "RunRecord",
    "RoundMetric",
]
