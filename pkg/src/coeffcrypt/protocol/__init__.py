"""In-process simulation of owners, cloud server, key centre, group organizers and users."""

from .boundaries import byte_violations, check as check_boundaries, type_violations
from .bus import Bus, RoundCounter
from .entities import CloudServer, GroupOrganizer, Kmc, Owner, User
from .messages import KINDS, Message
from .report import feature_table_bits, kba_row, security_report
from .system import Config, QueryOutcome, System

__all__ = [
    "Bus", "RoundCounter", "CloudServer", "GroupOrganizer", "Kmc", "Owner", "User", "KINDS", "Message",
    "Config", "QueryOutcome", "System", "security_report", "feature_table_bits", "kba_row",
    "check_boundaries", "type_violations", "byte_violations",
]
