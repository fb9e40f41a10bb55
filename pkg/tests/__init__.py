"""Test package for the cough counter."""
