import json
import logging
import os
import time
from datetime import datetime
from enum import Enum
from typing import Any, Dict, List, Optional

from config.settings import LOG_LEVEL, LOGS_DIR

LOGGER_NAME = "risk_pipeline"
TEXT_LOG = "risk_pipeline.log"
AUDIT_LOG = "audit.jsonl"
PERFORMANCE_LOG = "performance.jsonl"


class ActionType(Enum):
    """Audit record types written to audit.jsonl and performance.jsonl."""
    RUN_STARTED = "run_started"
    RUN_FINISHED = "run_finished"
    STAGE_STARTED = "stage_started"
    STAGE_COMPLETED = "stage_completed"
    STAGE_FAILED = "stage_failed"
    ARTIFACT_WRITTEN = "artifact_written"
    ARTIFACT_REMOVED = "artifact_removed"
    DECISION_RECORDED = "decision_recorded"
    WARNING_RECORDED = "warning_recorded"
    VALIDATION_PASSED = "validation_passed"
    VALIDATION_FAILED = "validation_failed"
    TIMING = "timing"


class LogLevel(Enum):
    INFO = "INFO"
    WARNING = "WARNING"
    ERROR = "ERROR"
    AUDIT = "AUDIT"


class PipelineLogger:
    """Text log plus JSONL audit and timing trails for pipeline runs.

    Every stage, artifact, recorded default and soft failure gets an audit
    record so a run can be reconstructed from the logs directory alone.
    `warning_count` counts soft failures since construction.
    """

    def __init__(self, log_level: str = None, logs_dir: str = None):
        self.logs_dir = logs_dir or LOGS_DIR
        os.makedirs(self.logs_dir, exist_ok=True)
        self.log_file = os.path.join(self.logs_dir, TEXT_LOG)
        self.audit_log_file = os.path.join(self.logs_dir, AUDIT_LOG)
        self.performance_log_file = os.path.join(self.logs_dir, PERFORMANCE_LOG)

        self.logger = self._configure(log_level or LOG_LEVEL)
        self.session_id = f"run_{datetime.now():%Y%m%dT%H%M%S}_{os.getpid()}"
        self.warning_count = 0
        self._timers: Dict[str, float] = {}
        self._timer_serial = 0

    def _configure(self, log_level: str) -> logging.Logger:
        logger = logging.getLogger(LOGGER_NAME)
        logger.setLevel(getattr(logging, log_level.upper()))
        logger.propagate = False
        # A new PipelineLogger takes over the named logger.
        for handler in list(logger.handlers):
            logger.removeHandler(handler)
            handler.close()

        formatter = logging.Formatter("[%(asctime)s] [%(levelname)s] %(message)s")
        for handler in (logging.FileHandler(self.log_file, mode="a", encoding="utf-8"), logging.StreamHandler()):
            handler.setFormatter(formatter)
            logger.addHandler(handler)
        return logger

    def _record(self, action: ActionType, level: LogLevel, target: Optional[str] = None, **fields):
        entry = {
            "timestamp": datetime.now().isoformat(),
            "session_id": self.session_id,
            "action_type": action.value,
            "level": level.value,
            "pid": os.getpid(),
        }
        entry.update(fields)
        try:
            with open(target or self.audit_log_file, "a", encoding="utf-8") as f:
                f.write(json.dumps(entry, default=str) + "\n")
        except OSError as e:
            self.logger.error(f"Could not append to {target or self.audit_log_file}: {e}")

    def info(self, message):
        self.logger.info(message)

    def warning(self, message):
        self.logger.warning(message)

    def error(self, message):
        self.logger.error(f"ERROR: {message}")

    def debug(self, message):
        self.logger.debug(message)

    # Timing
    def start_timer(self, operation_name: str) -> str:
        self._timer_serial += 1
        timer_id = f"{operation_name}#{self._timer_serial}"
        self._timers[timer_id] = time.perf_counter()
        return timer_id

    def end_timer(self, timer_id: str) -> float:
        """Stop a timer, append it to performance.jsonl and return seconds elapsed."""
        started = self._timers.pop(timer_id, None)
        if started is None:
            self.logger.warning(f"Timer {timer_id} was never started")
            return 0.0
        duration = time.perf_counter() - started
        self._record(ActionType.TIMING, LogLevel.INFO, target=self.performance_log_file,
                     operation=timer_id.split("#", 1)[0], duration_seconds=round(duration, 3))
        return duration

    # Audit trail
    def log_run_start(self, config_details: Dict[str, Any] = None):
        self.info(f"Risk pipeline run started ({self.session_id})")
        self._record(ActionType.RUN_STARTED, LogLevel.AUDIT, config=config_details or {})

    def log_run_finish(self, output_dir: str, artifacts: List[str]):
        self.info(f"✅ RUN COMPLETE: {len(artifacts)} artifacts in {output_dir}")
        self._record(ActionType.RUN_FINISHED, LogLevel.AUDIT, output_dir=output_dir, artifacts=artifacts,
                     warnings=self.warning_count)

    def log_stage_start(self, stage: str, inputs: Dict[str, Any] = None):
        self.info("=" * 60)
        self.info(f"Stage started: {stage}")
        self._record(ActionType.STAGE_STARTED, LogLevel.AUDIT, stage=stage, inputs=inputs or {})

    def log_stage_success(self, stage: str, summary: Dict[str, Any] = None):
        summary = summary or {}
        details = " | ".join(f"{key}: {value}" for key, value in summary.items())
        self.info(f"✅ STAGE {stage}" + (f" | {details}" if details else ""))
        self._record(ActionType.STAGE_COMPLETED, LogLevel.AUDIT, stage=stage, summary=summary)

    def log_stage_failure(self, stage: str, reason: str, exit_code: int, error_details: Dict[str, Any] = None):
        self.error(f"STAGE {stage} FAILED (exit {exit_code}): {reason}")
        self._record(ActionType.STAGE_FAILED, LogLevel.ERROR, stage=stage, reason=reason, exit_code=exit_code,
                     details=error_details or {})

    def log_artifact_written(self, path: str, stage: str = None):
        self.debug(f"Artifact written: {path}")
        size = os.path.getsize(path) if os.path.exists(path) else None
        self._record(ActionType.ARTIFACT_WRITTEN, LogLevel.AUDIT, stage=stage, path=path, size_bytes=size)

    def log_artifact_removed(self, path: str, reason: str):
        self.info(f"Rolled back artifact: {path} ({reason})")
        self._record(ActionType.ARTIFACT_REMOVED, LogLevel.AUDIT, path=path, reason=reason)

    def log_decision(self, name: str, value: Any, reason: str):
        """Record a default the pipeline chose where the method leaves it open."""
        self.info(f"[DECISION] {name} = {value} ({reason})")
        self._record(ActionType.DECISION_RECORDED, LogLevel.AUDIT, name=name, value=value, reason=reason)

    def log_warning_event(self, name: str, message: str, details: Dict[str, Any] = None):
        """Soft failure: reported and counted, the stage carries on."""
        self.warning_count += 1
        self.warning(f"⚠️  {name}: {message}")
        self._record(ActionType.WARNING_RECORDED, LogLevel.WARNING, name=name, message=message,
                     details=details or {})

    def log_validation_result(self, validation_type: str, success: bool, details: Dict[str, Any]):
        status = "PASSED" if success else "FAILED"
        self.info(f"[VALIDATION] {validation_type} {status}: {details.get('message', '')}")
        self._record(ActionType.VALIDATION_PASSED if success else ActionType.VALIDATION_FAILED,
                     LogLevel.INFO if success else LogLevel.WARNING,
                     validation_type=validation_type, details=details)


_default_logger: Optional[PipelineLogger] = None


def get_logger() -> PipelineLogger:
    """Process-wide logger used when a caller does not pass one."""
    global _default_logger
    if _default_logger is None:
        _default_logger = PipelineLogger()
    return _default_logger
