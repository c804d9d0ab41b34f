"""SQLAlchemy run ledger: one row per command run or sweep member."""

import json
from datetime import datetime
from typing import List, Optional

from sqlalchemy import Column, DateTime, Index, Integer, String, Text, create_engine
from sqlalchemy.engine import Engine
from sqlalchemy.orm import Session, declarative_base, sessionmaker

from ..core.config import LevitrapSettings
from ..core.schemas import RunManifest

Base = declarative_base()


class RunRecord(Base):
    """A manifest together with the outcome of the run it describes."""

    __tablename__ = "runs"

    id = Column(Integer, primary_key=True, autoincrement=True)
    manifest_id = Column(String(32), nullable=False, unique=True, index=True)
    command = Column(String(50), nullable=False, index=True)
    config_path = Column(String(512), nullable=True)
    master_seed = Column(Integer, nullable=False)
    status = Column(String(20), nullable=False)  # running, ok, escaped, heating, failed
    flags = Column(Text, nullable=True)  # JSON
    outputs = Column(Text, nullable=True)  # JSON list of paths
    tool_version = Column(String(20), nullable=False)
    created_at = Column(DateTime, default=datetime.utcnow)
    finished_at = Column(DateTime, nullable=True)

    __table_args__ = (Index("idx_command_status", "command", "status"),)

    def __repr__(self) -> str:
        return f"<RunRecord(manifest_id={self.manifest_id}, command={self.command}, status={self.status})>"

    @classmethod
    def from_manifest(cls, manifest: RunManifest) -> "RunRecord":
        return cls(
            manifest_id=manifest.manifest_id,
            command=manifest.command,
            config_path=manifest.config_path,
            master_seed=manifest.master_seed,
            status=manifest.status,
            flags=json.dumps(manifest.flags, default=str),
            outputs=json.dumps(manifest.outputs),
            tool_version=manifest.tool_version,
            created_at=manifest.timestamp.replace(tzinfo=None),
        )

    @property
    def output_paths(self) -> List[str]:
        return json.loads(self.outputs or "[]")


class LedgerManager:
    """Database connection and session management for the run ledger."""

    def __init__(self, settings: Optional[LevitrapSettings] = None, url: Optional[str] = None):
        self.settings = settings or LevitrapSettings()
        self.url = url or self.settings.ledger_url
        self._engine: Optional[Engine] = None
        self._session_factory = None

    @property
    def engine(self) -> Engine:
        """Get or create the database engine."""
        if self._engine is None:
            self._engine = create_engine(self.url, echo=False)
        return self._engine

    def create_tables(self) -> None:
        Base.metadata.create_all(self.engine)

    def get_session(self) -> Session:
        """Get a new database session."""
        if self._session_factory is None:
            self._session_factory = sessionmaker(bind=self.engine)
        return self._session_factory()

    def record_start(self, manifest: RunManifest) -> None:
        session = self.get_session()
        try:
            session.add(RunRecord.from_manifest(manifest))
            session.commit()
        finally:
            session.close()

    def record_finish(self, manifest: RunManifest) -> None:
        """Store the final status and outputs of a run started with ``record_start``."""
        session = self.get_session()
        try:
            record = session.query(RunRecord).filter(RunRecord.manifest_id == manifest.manifest_id).one()
            record.status = manifest.status
            record.outputs = json.dumps(manifest.outputs)
            record.finished_at = datetime.utcnow()
            session.commit()
        finally:
            session.close()

    def runs(self, command: Optional[str] = None) -> List[RunRecord]:
        session = self.get_session()
        try:
            query = session.query(RunRecord)
            if command:
                query = query.filter(RunRecord.command == command)
            records = query.order_by(RunRecord.id).all()
            session.expunge_all()
            return records
        finally:
            session.close()
