from aioguiprobe.main import app


app()
