"""votesim: a deterministic desk-scale simulator of an Internet election.

Models the full stack an online-voting attacker sees: a miniature TLS
handshake with legacy export ciphersuites, a discrete-event network with
man-in-the-middle tap points, the four-step register/cast/verify/receipt
voting protocol, and the adversary strategies that exploit them. Every
run is a pure function of (scenario config, seed).
"""

__version__ = "0.1.0"
