import sys
import warnings
from colorama import init, Fore, Style

# Initialize colorama for Windows support
init(autoreset=True)

warnings.filterwarnings("ignore", category=RuntimeWarning)

from cli.commands import main


if __name__ == "__main__":
    try:
        sys.exit(main())
    except KeyboardInterrupt:
        print(f"\n\n{Fore.YELLOW}Interrupted by user. Exiting...{Style.RESET_ALL}", file=sys.stderr)
        sys.exit(130)
    except Exception as e:
        print(f"\n\n{Fore.RED}Error: {e}{Style.RESET_ALL}", file=sys.stderr)
        import traceback
        traceback.print_exc()
        sys.exit(2)
