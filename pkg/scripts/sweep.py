"""Message-size x key-size grid on the hidden-target setting (selection accuracy per cell).

Extra arguments are passed through to ``collab-handshake sweep``, e.g.
``--train.iterations 3000 --messages 1,4,64 --keys 64``.
"""
import sys

from collab_handshake.cli import main

if __name__ == "__main__":
    argv = sys.argv[1:]
    if "--out" not in argv:
        argv = ["--out", "runs/sweep", *argv]
    sys.exit(main(["sweep", *argv]))
