# Mock classes for testing