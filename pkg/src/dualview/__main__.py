from dualview.cli import main

main()
