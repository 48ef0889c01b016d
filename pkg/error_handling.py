#!/usr/bin/env python3
"""
Error Handling for the Edge Streaming Simulator

This module provides the error taxonomy, scenario validation and the mapping
from failures to command-line exit codes used by the experiment harness.
"""

import logging
import traceback
from typing import Dict, Any, List, Optional, Tuple
from enum import Enum

logger = logging.getLogger(__name__)


class ErrorSeverity(Enum):
    """Error severity levels for classification and handling."""
    LOW = "low"
    MEDIUM = "medium"
    HIGH = "high"
    CRITICAL = "critical"


class ErrorCategory(Enum):
    """Categories of errors for better organization and handling."""
    VALIDATION = "validation"
    CONFIGURATION = "configuration"
    TRACE = "trace"
    SESSION = "session"
    IO = "io"
    UNKNOWN = "unknown"


EXIT_CODES = {
    ErrorCategory.VALIDATION: 2,
    ErrorCategory.CONFIGURATION: 2,
    ErrorCategory.IO: 3,
}


class SimulationError(Exception):
    """Base exception for simulator failures."""

    def __init__(self, message: str, category: ErrorCategory = ErrorCategory.UNKNOWN,
                 severity: ErrorSeverity = ErrorSeverity.MEDIUM,
                 details: Optional[Dict[str, Any]] = None, recoverable: bool = False):
        super().__init__(message)
        self.message = message
        self.category = category
        self.severity = severity
        self.details = details or {}
        self.recoverable = recoverable


class ConfigError(SimulationError):
    """Invalid or incomplete scenario configuration."""

    def __init__(self, message: str, field: Optional[str] = None,
                 errors: Optional[List[str]] = None):
        details = {'field': field, 'errors': errors or [message]}
        super().__init__(message, ErrorCategory.CONFIGURATION, ErrorSeverity.HIGH, details)
        self.field = field
        self.errors = errors or [message]


class OutOfSessionError(SimulationError):
    """A slot outside [A_i, D_i] was used for a session lookup."""

    def __init__(self, client: int, slot: int, arrival: int, departure: int):
        message = (f"Slot {slot} is outside the session of client {client} "
                   f"[{arrival}, {departure}]")
        super().__init__(message, ErrorCategory.SESSION, ErrorSeverity.MEDIUM,
                         {'client': client, 'slot': slot,
                          'arrival': arrival, 'departure': departure})


class IncompleteTraceError(SimulationError):
    """An SNR trace does not cover every (client, server, slot)."""

    def __init__(self, missing: Tuple[int, int, int]):
        client, server, slot = missing
        message = f"SNR trace is incomplete: no row for client={client}, server={server}, slot={slot}"
        super().__init__(message, ErrorCategory.TRACE, ErrorSeverity.HIGH,
                         {'client': client, 'server': server, 'slot': slot})
        self.missing = missing


class PreconditionError(SimulationError):
    """An operation was called outside its documented domain."""

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message, ErrorCategory.VALIDATION, ErrorSeverity.LOW, details)


class ExperimentIOError(SimulationError):
    """Reading inputs or writing results failed."""

    def __init__(self, message: str, path: Optional[str] = None):
        super().__init__(message, ErrorCategory.IO, ErrorSeverity.HIGH, {'path': path})


class ErrorHandler:
    """Classifies, logs and maps errors to exit codes."""

    def __init__(self):
        self.error_log = []
        self.recovery_suggestions = {
            ErrorCategory.VALIDATION: [
                "Check the value ranges of the named fields",
                "Compare the config against scenario_config.json",
            ],
            ErrorCategory.CONFIGURATION: [
                "Add the missing field or fix its type",
                "Required fields have no default: num_clients, num_servers, num_slots, "
                "cache_size, buffer_cap, ladder",
            ],
            ErrorCategory.TRACE: [
                "Regenerate the trace or drop trace_path to use the built-in generator",
                "Make sure the header is client,server,slot,snr_db",
            ],
            ErrorCategory.IO: [
                "Check that the output directory is writable",
                "Check that the input paths exist",
            ],
        }

    def handle_error(self, error: Exception, context: str = "Unknown") -> Dict[str, Any]:
        """
        Handle any error and return structured error information.

        Args:
            error: The exception that occurred
            context: Context where the error occurred

        Returns:
            Dictionary with error details, recovery suggestions and exit code
        """
        error_info = self.classify_error(error)
        self.log_error(error, context, error_info)

        return {
            'error_type': error_info['type'],
            'category': error_info['category'],
            'severity': error_info['severity'],
            'message': str(error),
            'recovery_suggestions': self.get_recovery_suggestions(error_info['category']),
            'recoverable': error_info['recoverable'],
            'technical_details': error_info['details'],
            'context': context,
            'exit_code': EXIT_CODES.get(error_info['category'], 1),
        }

    def classify_error(self, error: Exception) -> Dict[str, Any]:
        """Classify the error based on its type."""
        if isinstance(error, SimulationError):
            return {
                'type': type(error).__name__,
                'category': error.category,
                'severity': error.severity,
                'recoverable': error.recoverable,
                'details': error.details,
            }

        error_info = {
            'type': type(error).__name__,
            'category': ErrorCategory.UNKNOWN,
            'severity': ErrorSeverity.CRITICAL,
            'recoverable': False,
            'details': {},
        }
        if isinstance(error, OSError):
            error_info.update({
                'category': ErrorCategory.IO,
                'severity': ErrorSeverity.HIGH,
                'details': {'path': getattr(error, 'filename', None)},
            })
        elif isinstance(error, (KeyError, TypeError, ValueError)):
            error_info.update({
                'category': ErrorCategory.VALIDATION,
                'severity': ErrorSeverity.MEDIUM,
            })
        return error_info

    def get_recovery_suggestions(self, category: ErrorCategory) -> List[str]:
        """Get recovery suggestions for a specific error category."""
        return self.recovery_suggestions.get(category, [
            "Check the log file for the traceback",
        ])

    def log_error(self, error: Exception, context: str, error_info: Dict[str, Any]):
        """Record the error and log it."""
        self.error_log.append({
            'error_type': error_info['type'],
            'category': error_info['category'].value,
            'severity': error_info['severity'].value,
            'message': str(error),
            'context': context,
            'traceback': traceback.format_exc(),
            'details': error_info['details'],
        })

        logger.error(f"[{error_info['category'].value.upper()}] {error_info['type']}: {error}")
        logger.error(f"Context: {context}")
        if error_info['details']:
            logger.debug(f"Details: {error_info['details']}")


class ValidationErrorHandler:
    """Field-level validation of a resolved scenario configuration."""

    REQUIRED_FIELDS = ['num_clients', 'num_servers', 'num_slots', 'cache_size',
                       'buffer_cap', 'ladder']
    CACHE_POLICIES = ['RBCRH', 'LRU', 'LFU', 'OPT1', 'FIXED']
    STRATEGIES = ['QOE_MAX', 'JOINT', 'TRAFFIC_MIN']
    RETENTION_CURVES = ['LINEAR', 'RC1', 'RC2', 'RC3', 'RC4', 'RC5']

    @staticmethod
    def validate_required(raw: Dict[str, Any]) -> Tuple[bool, List[str]]:
        """Check that every field without a default is present."""
        errors = [f"{name}: required field is missing"
                  for name in ValidationErrorHandler.REQUIRED_FIELDS if name not in raw]
        return len(errors) == 0, errors

    @staticmethod
    def validate_ladder(ladder: Any) -> Tuple[bool, Optional[str]]:
        """Validate the bitrate ladder: non-empty, positive, strictly increasing."""
        if not isinstance(ladder, list) or not ladder:
            return False, "ladder: must be a non-empty list of bitrates (Mbps)"
        if not all(isinstance(r, (int, float)) for r in ladder):
            return False, "ladder: every bitrate must be a number"
        if any(r <= 0 for r in ladder):
            return False, "ladder: bitrates must be > 0"
        if any(b <= a for a, b in zip(ladder, ladder[1:])):
            return False, "ladder: bitrates must be strictly increasing"
        return True, None

    @staticmethod
    def validate_videos(videos: Any, chunk_len: float) -> Tuple[bool, List[str]]:
        """Validate the video catalog entries."""
        if not isinstance(videos, list) or not videos:
            return False, ["videos: must be a non-empty list"]

        errors = []
        total_popularity = 0.0
        for i, video in enumerate(videos):
            video_errors = []
            for key in ('id', 'duration', 'popularity', 'min_watch'):
                if key not in video:
                    video_errors.append(f"{key} is required")
            if video_errors:
                errors.append(f"videos[{i}]: {'; '.join(video_errors)}")
                continue

            duration = video['duration']
            if duration <= 0 or abs(duration / chunk_len - round(duration / chunk_len)) > 1e-9:
                video_errors.append(f"duration {duration} must be a positive multiple of chunk_len {chunk_len}")
            if video['popularity'] < 0:
                video_errors.append("popularity must be >= 0")
            if video['min_watch'] < 0:
                video_errors.append("min_watch must be >= 0")
            elif video['min_watch'] > duration:
                video_errors.append(f"min_watch {video['min_watch']} exceeds duration {duration}")
            curve = video.get('retention_curve', 'LINEAR')
            if curve not in ValidationErrorHandler.RETENTION_CURVES:
                video_errors.append(f"retention_curve '{curve}' is not one of {ValidationErrorHandler.RETENTION_CURVES}")
            total_popularity += video['popularity']
            if video_errors:
                errors.append(f"videos[{i}]: {'; '.join(video_errors)}")

        if abs(total_popularity - 1.0) > 1e-6:
            errors.append(f"videos: popularity weights must sum to 1 (got {total_popularity:.6f})")
        return len(errors) == 0, errors

    @staticmethod
    def validate_scenario(raw: Dict[str, Any]) -> Tuple[bool, List[str]]:
        """
        Validate a resolved (defaults-merged) configuration.

        Args:
            raw: Flat configuration dictionary

        Returns:
            Tuple of (is_valid, list_of_errors)
        """
        ok, errors = ValidationErrorHandler.validate_required(raw)
        if not ok:
            return False, errors

        for name in ('num_clients', 'num_servers', 'num_slots', 'rb_per_slot'):
            value = raw.get(name)
            if not isinstance(value, int) or isinstance(value, bool):
                errors.append(f"{name}: must be an integer")
            elif value < (0 if name == 'num_clients' else 1):
                errors.append(f"{name}: out of range ({value})")

        for name in ('slot_len', 'chunk_len', 'cache_size', 'buffer_cap'):
            value = raw.get(name)
            if not isinstance(value, (int, float)) or value <= 0:
                errors.append(f"{name}: must be a positive number")

        for name in ('beta', 'fairness_threshold', 'fixed_fill_ratio', 'terminal_retention'):
            value = raw.get(name)
            if not isinstance(value, (int, float)) or not 0.0 <= value <= 1.0:
                errors.append(f"{name}: must be in [0, 1]")

        ladder_ok, ladder_error = ValidationErrorHandler.validate_ladder(raw.get('ladder'))
        if not ladder_ok:
            errors.append(ladder_error)

        if not errors:
            slot_len, chunk_len = raw['slot_len'], raw['chunk_len']
            ratio = chunk_len / slot_len
            if abs(ratio - round(ratio)) > 1e-9:
                errors.append(f"chunk_len: {chunk_len} s is not a whole number of {slot_len} s slots")
            if raw['cache_size'] < chunk_len * raw['ladder'][0]:
                errors.append(f"cache_size: {raw['cache_size']} Mb cannot hold one lowest-quality "
                              f"chunk ({chunk_len * raw['ladder'][0]} Mb)")
            _, video_errors = ValidationErrorHandler.validate_videos(raw.get('videos'), chunk_len)
            errors.extend(video_errors)
            arrival = raw.get('arrival_interval')
            if not isinstance(arrival, (int, float)) or arrival < 0:
                errors.append("arrival_interval: must be a number of seconds >= 0")
            elif arrival >= raw['num_slots'] * slot_len:
                errors.append(f"arrival_interval: {arrival} s leaves no slot to stream in")

        if raw.get('cache_policy') not in ValidationErrorHandler.CACHE_POLICIES:
            errors.append(f"cache_policy: must be one of {ValidationErrorHandler.CACHE_POLICIES}")
        if raw.get('strategy') not in ValidationErrorHandler.STRATEGIES:
            errors.append(f"strategy: must be one of {ValidationErrorHandler.STRATEGIES}")
        if raw.get('feasibility_gate') not in ('literal', 'strict'):
            errors.append("feasibility_gate: must be 'literal' or 'strict'")

        if raw.get('snr_min', 0) >= raw.get('snr_max', 1):
            errors.append("snr_min: must be below snr_max")
        if raw.get('alpha', 1) <= 0:
            errors.append("alpha: must be > 0")
        if raw.get('thr_max', 1) <= 0:
            errors.append("thr_max: must be > 0")

        return len(errors) == 0, errors


error_handler = ErrorHandler()
validation_handler = ValidationErrorHandler()


def handle_simulation_error(error: Exception, context: str = "Experiment") -> Dict[str, Any]:
    """
    Convenience function to handle harness errors.

    Args:
        error: The exception that occurred
        context: Context where the error occurred

    Returns:
        Dictionary with error details, recovery suggestions and exit code
    """
    return error_handler.handle_error(error, context)


def create_error_summary(error_log: List[Dict[str, Any]]) -> Dict[str, Any]:
    """
    Create a summary of errors for monitoring and debugging.

    Args:
        error_log: List of error log entries

    Returns:
        Summary statistics
    """
    if not error_log:
        return {"total_errors": 0, "summary": "No errors recorded"}

    category_counts = {}
    severity_counts = {}
    for entry in error_log:
        category_counts[entry['category']] = category_counts.get(entry['category'], 0) + 1
        severity_counts[entry['severity']] = severity_counts.get(entry['severity'], 0) + 1

    error_types = [entry['error_type'] for entry in error_log]
    most_common_error = max(set(error_types), key=error_types.count)

    return {
        "total_errors": len(error_log),
        "category_breakdown": category_counts,
        "severity_breakdown": severity_counts,
        "most_common_error": most_common_error,
        "recent_errors": error_log[-5:],
        "summary": f"Total errors: {len(error_log)}, Most common: {most_common_error}"
    }
