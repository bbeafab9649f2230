import sys
from colorama import Fore, Style, init

init(autoreset=True)

_verbose = False


def set_verbose(enabled: bool):
    global _verbose
    _verbose = bool(enabled)


def is_verbose() -> bool:
    return _verbose


def _emit(line: str):
    print(line, file=sys.stderr)


def info(tag: str, message: str):
    """Tagged progress line, only shown in verbose mode."""
    if _verbose:
        _emit(f"{Fore.CYAN}[{tag}]{Style.RESET_ALL} {message}")


def success(message: str):
    if _verbose:
        _emit(f"{Fore.GREEN}✓ {message}{Style.RESET_ALL}")


def warn(tag: str, message: str):
    _emit(f"{Fore.YELLOW}[{tag}] Warning: {message}{Style.RESET_ALL}")


def error(code: str, message: str):
    # machine-parseable: "error: <code>: <message>"
    _emit(f"{Fore.RED}error: {code}: {message}{Style.RESET_ALL}")
