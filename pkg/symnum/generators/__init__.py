"""symnum - Generators turning compiled models into numpy source and reference documents."""
