# Tests for the SA-AKI risk pipeline
