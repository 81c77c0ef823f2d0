"""Test suite for the shear-wave elastography toolkit."""
