"""Model context protocol: primitives, schema validation, wire layer."""
