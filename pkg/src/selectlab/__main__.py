from selectlab.cli import main

raise SystemExit(main())
