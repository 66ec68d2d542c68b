from .controller import Controller, InProcessChannel, MonitoringSession
from .loss import LossReport, LossTracker, compute_interval_loss
from .southbound import SRv6ManagerService, SRv6PMService

__all__ = [
    "Controller", "InProcessChannel", "LossReport", "LossTracker", "MonitoringSession",
    "SRv6ManagerService", "SRv6PMService", "compute_interval_loss",
]
