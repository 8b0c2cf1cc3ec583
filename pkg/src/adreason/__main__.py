from adreason.cli import main

raise SystemExit(main())
