# mcp_server_engine.py - corrugation engine tool server
import logging
from typing import Any, Dict

import uvicorn
from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel, Field

from corrugation.errors import ConfigError, EngineError, PreconditionError
from engine_config import ENGINE_SERVER_URL, SERVER_HOST, SERVER_PORT
from engine_server_logic import check_admissible, decompose_matrix, run_pipeline, run_stage

log = logging.getLogger(__name__)

# ---------------------------------------------------
# FastAPI App
# ---------------------------------------------------
app = FastAPI(title="Corrugation Engine Server", version="1.0")

app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

# ---------------------------------------------------
# Data Models
# ---------------------------------------------------
class ToolInvocation(BaseModel):
    tool_name: str = Field(description="name of the tool to invoke")
    arguments: Dict[str, Any] = Field(default_factory=dict, description="tool keyword arguments")


TOOLS = {
    "decompose_matrix": decompose_matrix,
    "run_stage": run_stage,
    "check_admissible": check_admissible,
    "run_pipeline": run_pipeline,
}

TOOL_SPECS = [
    {
        "name": "decompose_matrix",
        "description": "Rank-one decomposition of a symmetric positive 2x2 matrix",
        "parameters": {
            "matrix": {"type": "array", "description": "2x2 symmetric matrix as nested lists"},
        },
    },
    {
        "name": "run_stage",
        "description": "One corrugation stage on the flat benchmark chart",
        "parameters": {
            "extent": {"type": "number", "description": "chart side length"},
            "resolution": {"type": "integer", "description": "nodes per axis"},
            "delta": {"type": "number", "description": "amplitude budget delta in (0, 1)"},
            "lam": {"type": "number", "description": "frequency base lambda"},
            "tau": {"type": "number", "description": "frequency exponent tau > 1"},
            "C0": {"type": "number", "description": "degenerate-cutoff constant"},
            "compact": {"type": "boolean", "description": "localize rho to a bump"},
        },
    },
    {
        "name": "check_admissible",
        "description": "Admissibility margin of a collar problem",
        "parameters": {
            "problem": {"type": "object", "description": "problem file contents (kind circle, flat_line or sampled)"},
        },
    },
    {
        "name": "run_pipeline",
        "description": "Run a full pipeline from a run config and return its manifest",
        "parameters": {
            "config": {"type": "object", "description": "run config with a command field"},
            "out_dir": {"type": "string", "description": "optional artifact directory"},
        },
    },
]

# ---------------------------------------------------
# MCP Endpoints
# ---------------------------------------------------
@app.get("/")
def root():
    return {
        "message": "Corrugation engine server is running",
        "version": "1.0",
        "available_tools": list(TOOLS),
    }


@app.get("/tools")
def list_tools():
    """List available tools."""
    return {"tools": TOOL_SPECS}


@app.post("/invoke_tool")
def invoke_tool(invocation: ToolInvocation):
    """Invoke a tool."""
    log.info("🔧 [Engine MCP] Invoking tool: %s", invocation.tool_name)
    tool = TOOLS.get(invocation.tool_name)
    if tool is None:
        raise HTTPException(status_code=400, detail=f"Unknown tool: {invocation.tool_name}")
    try:
        return {"success": True, "result": tool(**invocation.arguments)}
    except TypeError as e:
        log.error("❌ [Engine MCP] Bad arguments: %s", e)
        raise HTTPException(status_code=400, detail=str(e))
    except ConfigError as e:
        log.error("❌ [Engine MCP] Config error: %s", e)
        raise HTTPException(status_code=400, detail=e.to_dict())
    except PreconditionError as e:
        log.error("❌ [Engine MCP] Precondition failed: %s", e)
        raise HTTPException(status_code=422, detail=e.to_dict())
    except EngineError as e:
        log.error("❌ [Engine MCP] Numerical failure: %s", e)
        raise HTTPException(status_code=500, detail=e.to_dict())
    except Exception as e:
        log.error("❌ [Engine MCP] Error: %s", e)
        raise HTTPException(status_code=500, detail=str(e))

# ---------------------------------------------------
# Server Runner
# ---------------------------------------------------
if __name__ == "__main__":
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    log.info("🚀 Starting corrugation engine server on port %d", SERVER_PORT)
    log.info("📡 MCP endpoint: %s", ENGINE_SERVER_URL)
    uvicorn.run(app, host=SERVER_HOST, port=SERVER_PORT)
