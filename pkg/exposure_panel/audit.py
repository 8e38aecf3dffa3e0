#!/usr/bin/env python3
"""
Audit trail for rejected and excluded records
Every data-level rejection is recorded with a stage and a reason code instead of
being dropped silently. The log is written as line-delimited JSON.
"""

import json
import logging
import os
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AuditEntry:
    stage: str
    reason: str
    record_id: Optional[str] = None
    detail: Optional[str] = None


@dataclass
class AuditLog:
    """Append-only collection of audit entries"""

    entries: List[AuditEntry] = field(default_factory=list)

    def record(self, stage: str, reason: str, record_id: Optional[str] = None,
               detail: Optional[str] = None) -> None:
        self.entries.append(AuditEntry(stage, reason, record_id, detail))
        if logger.isEnabledFor(logging.DEBUG):
            logger.debug(f"Audit [{stage}] {reason}: {record_id} {detail or ''}".rstrip())

    def count(self, stage: str, reason: Optional[str] = None) -> int:
        return sum(
            1 for entry in self.entries
            if entry.stage == stage and (reason is None or entry.reason == reason)
        )

    def tally(self) -> Dict[str, int]:
        """Counts keyed by 'stage:reason', sorted for stable serialization"""
        counts = Counter(f"{entry.stage}:{entry.reason}" for entry in self.entries)
        return dict(sorted(counts.items()))

    def extend(self, other: 'AuditLog') -> None:
        self.entries.extend(other.entries)

    def write_jsonl(self, path: str) -> str:
        """
        Write one JSON object per entry

        Args:
            path: Destination file (parent directory is created)

        Returns:
            The path written
        """
        directory = os.path.dirname(os.path.abspath(path))
        os.makedirs(directory, exist_ok=True)
        with open(path, 'w', encoding='utf-8') as f:
            for entry in self.entries:
                f.write(json.dumps(asdict(entry), sort_keys=True) + '\n')
        logger.info(f"Audit log written: {path} ({len(self.entries)} entries)")
        return path

    def __len__(self) -> int:
        return len(self.entries)
