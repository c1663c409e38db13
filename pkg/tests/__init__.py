"""Tests for the DMPSC toolkit."""
