"""The data manager: encrypted capsule store, grants and the job pipeline."""

from .service import ALL, DataCapsule, DataManager, Grant, Job, capsule_id_for

__all__ = ["ALL", "DataCapsule", "DataManager", "Grant", "Job", "capsule_id_for"]
