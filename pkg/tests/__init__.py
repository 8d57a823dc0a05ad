"""Tests for the ppp-ci package."""
