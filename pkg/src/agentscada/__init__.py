"""Agent-based SCADA platform at desk scale.

Simulated PLC stations are exposed through an OPC-DA-style access layer;
OPC agents bridge one device each into a message-passing agent world and
serve one-request/continuous-stream subscriptions; operator agents
discover them through the yellow-page directory, evaluate alarms,
maintain trends, issue writes, and expose their state over an HTTP
gateway for the browser console.
"""

__version__ = "0.1.0"
