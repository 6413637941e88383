"""Test cases for run tracking and logging setup"""
import json

import pytest

from regimebound import monitoring
from regimebound.errors import PDEError
from regimebound.monitoring import RunTracker, configure_logging, set_tracker, track_errors


@pytest.fixture
def tracker(tmp_path):
    previous = monitoring.run_tracker
    tracker = set_tracker(RunTracker(tmp_path / "logs"))
    yield tracker
    set_tracker(previous)


class TestRunTracker:
    """Test counters, timings and error capture"""

    @pytest.mark.unit
    def test_performance_records(self, tracker):
        """Test statistics and the jsonl file"""
        tracker.log_performance("solve", 0.5, {"nx": 61})
        tracker.log_performance("solve", 1.5)
        stats = tracker.get_performance_stats()["solve"]
        assert stats == {"calls": 2, "total_seconds": 2.0, "max_seconds": 1.5}
        lines = (tracker.log_dir / "performance.jsonl").read_text().splitlines()
        assert len(lines) == 2
        assert json.loads(lines[0])["metadata"] == {"nx": 61}

    @pytest.mark.unit
    def test_timed_block(self, tracker):
        """Test that a timed block is recorded even when it raises"""
        with pytest.raises(ValueError):
            with tracker.timed("march", layer=3):
                raise ValueError("boom")
        assert tracker.get_performance_stats()["march"]["calls"] == 1

    @pytest.mark.unit
    def test_in_memory_tracker(self):
        """Test a tracker without a log directory writes nothing"""
        tracker = RunTracker()
        tracker.log_performance("price", 0.1)
        assert tracker.health_check()["log_directory"] is None

    @pytest.mark.unit
    def test_health_check(self, tracker):
        """Test status after an error"""
        assert tracker.health_check()["status"] == "healthy"
        tracker.log_error(PDEError("no convergence"), {"layer": 4})
        health = tracker.health_check()
        assert health["status"] == "degraded"
        assert health["errors"] == 1
        assert tracker.errors[0]["error_type"] == "PDEError"
        assert tracker.errors[0]["context"] == {"layer": 4}


class TestTrackErrors:
    """Test the error-capturing decorator"""

    @pytest.mark.unit
    def test_records_and_reraises(self, tracker):
        """Test that the exception reaches both the tracker and the caller"""

        @track_errors
        def failing():
            raise PDEError("bad grid")

        with pytest.raises(PDEError):
            failing()
        assert tracker.errors[-1]["context"] == {"function": "failing"}

    @pytest.mark.unit
    def test_passes_results_through(self, tracker):
        """Test the decorator on success"""

        @track_errors
        def double(x):
            return 2 * x

        assert double(4) == 8
        assert tracker.errors == []


class TestConfigureLogging:
    """Test sink installation"""

    @pytest.mark.unit
    def test_file_sink(self, tmp_path):
        """Test that a log directory is created"""
        configure_logging("debug", tmp_path / "run_logs")
        assert (tmp_path / "run_logs").is_dir()
        configure_logging("WARNING")
