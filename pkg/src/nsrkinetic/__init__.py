"""Neural sparse representation workbench for kinetic equations."""
