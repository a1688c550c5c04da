"""Blank-splitting rules for cloze text."""

import pytest

from cogrl.errors import InputError
from cogrl.problems import split_blank


def test_split_keeps_prefix_and_suffix():
    c = split_blank("The cat sat on ___ mat.")
    assert c.prefix == "The cat sat on "
    assert c.suffix == " mat."
    assert c.text == "The cat sat on ___ mat."


def test_blank_at_start_and_end():
    assert split_blank("___ apple").prefix == ""
    assert split_blank("pick ___").suffix == ""


def test_longer_underscore_runs_are_one_blank():
    c = split_blank("a ______ b")
    assert c.prefix == "a " and c.suffix == " b"


def test_two_underscores_not_a_blank():
    with pytest.raises(InputError):
        split_blank("a __ b")


def test_multiple_blanks_rejected():
    with pytest.raises(InputError):
        split_blank("___ and ___")


def test_empty_text_rejected():
    with pytest.raises(InputError):
        split_blank("   ")
