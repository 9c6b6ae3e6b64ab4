import csv
import json
import os
from typing import Any, Dict, Iterable, List, Sequence

import numpy as np

from cantortree.utils import format_float, plain

HASH_COLUMN = 'config_hash'
SUMMARY_FILE = 'summary.json'
ERROR_FILE = 'error.json'


class Chronicle:
    """The only writer of run artifacts; one instance per output directory."""

    def __init__(self, out_dir: str, config_hash: str):
        self.out_dir = out_dir
        self.config_hash = config_hash
        self.tables: List[str] = []
        os.makedirs(out_dir, exist_ok=True)

    def path(self, name: str) -> str:
        return os.path.join(self.out_dir, name)

    async def log_table(
            self,
            name: str,
            header: Sequence[str],
            rows: Iterable[Sequence[Any]]
    ) -> None:
        with open(self.path(f'{name}.csv'), 'w', newline='') as f:
            writer = csv.writer(f)
            writer.writerow(list(header) + [HASH_COLUMN])
            for row in rows:
                writer.writerow(
                    [_cell(value) for value in row] + [self.config_hash]
                )
        self.tables.append(f'{name}.csv')

    async def log_json(self, name: str, data: Dict[str, Any]) -> None:
        with open(self.path(name), 'w') as f:
            json.dump(plain(data), f, indent=2, sort_keys=True)
            f.write('\n')

    async def log_summary(self, experiment: str, config: Dict[str, Any],
                          results: Dict[str, Any]) -> None:
        await self.log_json(SUMMARY_FILE, {
            'experiment': experiment,
            'config': config,
            HASH_COLUMN: self.config_hash,
            'tables': self.tables,
            'results': results,
        })

    async def log_error(self, kind: str, message: str, exit_code: int,
                        witness: Any = None) -> None:
        await self.log_json(ERROR_FILE, {
            'error': kind,
            'message': message,
            'exit_code': exit_code,
            'witness': witness,
            HASH_COLUMN: self.config_hash,
        })


def _cell(value: Any) -> Any:
    if isinstance(value, (float, np.floating)):
        return format_float(value)
    if isinstance(value, np.integer):
        return int(value)
    return value
