"""
CUMAD 命令行入口点

等价于安装后的 `cumad` 命令。
"""

import sys

from cumad.cli import main

if __name__ == "__main__":
    sys.exit(main())
