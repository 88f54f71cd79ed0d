"""Validates config files against schema/experiment.schema.json."""

import json
import sys
from pathlib import Path

import jsonschema


def main(argv):
    schema_path, *configs = argv
    schema = json.loads(Path(schema_path).read_text())
    jsonschema.Draft202012Validator.check_schema(schema)
    validator = jsonschema.Draft202012Validator(schema)
    bad = 0
    for path in configs:
        errors = sorted(validator.iter_errors(json.loads(Path(path).read_text())), key=str)
        for e in errors:
            print(f"{path}: {'/'.join(map(str, e.absolute_path))}: {e.message}")
        bad += bool(errors)
    print(f"{len(configs) - bad}/{len(configs)} configs valid")
    return 1 if bad else 0


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
