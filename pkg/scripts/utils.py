import json

from colorama import Fore, Style

_VERBOSITY = "info"
_LEVELS = ("quiet", "info", "debug")


class CoexSimError(Exception):
    pass


class PreconditionError(CoexSimError):
    pass


def set_verbosity(level):
    global _VERBOSITY
    level = (level or "info").lower()
    if level not in _LEVELS:
        print_with_color(f"ERROR: Unknown COEXSIM_LOG level {level}, using info", "red")
        level = "info"
    _VERBOSITY = level


def get_verbosity():
    return _VERBOSITY


def print_with_color(text: str, color=""):
    if _VERBOSITY == "quiet" and color != "red":
        return
    if color == "red":
        print(Fore.RED + text)
    elif color == "green":
        print(Fore.GREEN + text)
    elif color == "yellow":
        print(Fore.YELLOW + text)
    elif color == "blue":
        print(Fore.BLUE + text)
    elif color == "magenta":
        print(Fore.MAGENTA + text)
    elif color == "cyan":
        print(Fore.CYAN + text)
    elif color == "white":
        print(Fore.WHITE + text)
    elif color == "black":
        print(Fore.BLACK + text)
    else:
        print(text)
    print(Style.RESET_ALL, end="")


def print_debug(text: str):
    if _VERBOSITY == "debug":
        print_with_color(text, "magenta")


def append_log(log_path, log_item):
    with open(log_path, "a") as logfile:
        logfile.write(json.dumps(log_item) + "\n")


def to_hex(value):
    if isinstance(value, (bytes, bytearray)):
        return "0x" + bytes(value).hex()
    return f"0x{value:x}"
