"""Tests for triple-disentangle."""
