from capsuleguard.cli import main

main()
