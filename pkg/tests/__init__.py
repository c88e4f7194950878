"""Test suite for DShield Coordination Engine."""
